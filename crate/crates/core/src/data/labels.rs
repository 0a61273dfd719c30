use crate::error::{Error, Result};
use crate::model::{AttributeVector, Gender, ORIGIN_CLASSES};

/// Parses a UTKFace-style file name, `<age>_<gender>_<race>_<anything>`,
/// where age is 0..=116, gender is 0 (male) or 1 (female) and race is 0..=4.
pub fn parse_label_filename(name: &str) -> Result<AttributeVector> {
    let base = name.rsplit(['/', '\\']).next().unwrap_or(name);
    let err = |field: &'static str, detail: String| Error::LabelParse {
        name: name.to_string(),
        field,
        detail,
    };
    let mut fields = base.splitn(4, '_');
    let (Some(age), Some(gender), Some(race), Some(_tail)) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(err("layout", "expected <age>_<gender>_<race>_<tail>".into()));
    };

    let age: u32 = age.parse().map_err(|_| err("age", format!("`{age}` is not an integer")))?;
    if age > 116 {
        return Err(err("age", format!("{age} is outside 0..=116")));
    }
    let gender = match gender {
        "0" => Gender::Male,
        "1" => Gender::Female,
        other => return Err(err("gender", format!("`{other}` is not 0 or 1"))),
    };
    let race: usize = race
        .parse()
        .ok()
        .filter(|&r| r < ORIGIN_CLASSES)
        .ok_or_else(|| err("race", format!("`{race}` is not in 0..=4")))?;
    AttributeVector::from_labels(f64::from(age), gender, race)
}

/// Inverse of [`parse_label_filename`] for integer ages.
pub fn label_filename(attrs: &AttributeVector, tail: &str) -> Result<String> {
    let (Some(gender), Some(race)) = (attrs.gender_label(), attrs.origin_label()) else {
        return Err(Error::Contract("only hard gender/origin labels have file names".into()));
    };
    let age = attrs.age_years().round() as u32;
    Ok(format!("{age}_{}_{race}_{tail}", gender.index()))
}
