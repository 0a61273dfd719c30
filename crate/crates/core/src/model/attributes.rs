use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Oldest age in the labeling scheme; ages are normalized by this.
pub const MAX_AGE: f64 = 116.0;
/// Number of ethnic-origin classes.
pub const ORIGIN_CLASSES: usize = 5;
/// Length of the encoded attribute vector: age, gender, five origin slots.
pub const ATTR_LEN: usize = 2 + ORIGIN_CLASSES;

/// Gender code. Male is 0 and female is 1, following the public UTKFace
/// labels; 0.5 is accepted at decode time as a neutral value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn code(self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Gender::Male),
            1 => Some(Gender::Female),
            _ => None,
        }
    }
}

/// Requested origin when revealing: a concrete class or the uniform mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Class(usize),
    Neutral,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Class(i) => write!(f, "{i}"),
            Origin::Neutral => f.write_str("neutral"),
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("neutral") {
            return Ok(Origin::Neutral);
        }
        match s.parse::<usize>() {
            Ok(i) if i < ORIGIN_CLASSES => Ok(Origin::Class(i)),
            _ => Err(Error::Config(format!(
                "origin must be 0..{} or `neutral`, got `{s}`",
                ORIGIN_CLASSES - 1
            ))),
        }
    }
}

/// The protected attributes as the decoder sees them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    /// Age in years divided by 116, in `[0, 1]`.
    pub age_norm: f64,
    /// 0 = male, 1 = female, 0.5 = neutral.
    pub gender: f64,
    /// One-hot origin, or 0.2 everywhere for the neutral mix.
    pub origin: [f64; ORIGIN_CLASSES],
}

impl AttributeVector {
    /// Builds from dataset labels: age in years, gender, origin class.
    pub fn from_labels(age_years: f64, gender: Gender, origin: usize) -> Result<Self> {
        Self::build(age_years, gender.code(), Origin::Class(origin))
    }

    /// Builds a decode target. `gender` may be any value in `[0, 1]`.
    pub fn target(age_years: f64, gender: f64, origin: Origin) -> Result<Self> {
        Self::build(age_years, gender, origin)
    }

    /// Neutral gender and origin; decodes are of lower quality because no
    /// training sample ever carries these values.
    pub fn neutral(age_years: f64) -> Result<Self> {
        Self::build(age_years, 0.5, Origin::Neutral)
    }

    fn build(age_years: f64, gender: f64, origin: Origin) -> Result<Self> {
        if !(0.0..=MAX_AGE).contains(&age_years) {
            return Err(Error::Config(format!("age {age_years} outside 0..={MAX_AGE}")));
        }
        let origin = match origin {
            Origin::Class(i) if i < ORIGIN_CLASSES => {
                let mut o = [0.0; ORIGIN_CLASSES];
                o[i] = 1.0;
                o
            }
            Origin::Class(i) => {
                return Err(Error::Config(format!("origin class {i} out of range")));
            }
            Origin::Neutral => [1.0 / ORIGIN_CLASSES as f64; ORIGIN_CLASSES],
        };
        let v = Self {
            age_norm: age_years / MAX_AGE,
            gender,
            origin,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.age_norm) || !unit.contains(&self.gender) {
            return Err(Error::Contract(format!(
                "attribute values out of [0,1]: age_norm {}, gender {}",
                self.age_norm, self.gender
            )));
        }
        let sum: f64 = self.origin.iter().sum();
        if self.origin.iter().any(|&o| o < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("origin {:?} is not a distribution", self.origin)));
        }
        Ok(())
    }

    pub fn age_years(&self) -> f64 {
        self.age_norm * MAX_AGE
    }

    /// Hard gender label, when the value is exactly 0 or 1.
    pub fn gender_label(&self) -> Option<Gender> {
        if self.gender == 0.0 {
            Some(Gender::Male)
        } else if self.gender == 1.0 {
            Some(Gender::Female)
        } else {
            None
        }
    }

    /// Index of the origin class, when one-hot.
    pub fn origin_label(&self) -> Option<usize> {
        let hot: Vec<usize> = (0..ORIGIN_CLASSES).filter(|&i| self.origin[i] == 1.0).collect();
        match hot.as_slice() {
            [i] => Some(*i),
            _ => None,
        }
    }

    pub fn to_array(&self) -> [f64; ATTR_LEN] {
        let mut out = [0.0; ATTR_LEN];
        out[0] = self.age_norm;
        out[1] = self.gender;
        out[2..].copy_from_slice(&self.origin);
        out
    }
}
