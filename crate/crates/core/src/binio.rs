// Little-endian byte encoding shared by the checkpoint and record formats.

#[derive(Debug, Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn usize32(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("size fits in u32"));
    }

    pub fn str(&mut self, s: &str) {
        self.usize32(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Decoding failure: byte offset and description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct FormatError {
    pub offset: usize,
    pub detail: String,
}

pub(crate) type FormatResult<T> = std::result::Result<T, FormatError>;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn fail<T>(&self, detail: impl Into<String>) -> FormatResult<T> {
        Err(FormatError {
            offset: self.pos,
            detail: detail.into(),
        })
    }

    pub fn take(&mut self, n: usize, what: &str) -> FormatResult<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated: need {n} bytes for {what}, {} left",
                self.buf.len() - self.pos
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> FormatResult<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &str) -> FormatResult<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> FormatResult<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &str) -> FormatResult<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn i64(&mut self, what: &str) -> FormatResult<i64> {
        Ok(i64::from_le_bytes(self.array(what)?))
    }

    pub fn f32(&mut self, what: &str) -> FormatResult<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    pub fn f64(&mut self, what: &str) -> FormatResult<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    pub fn usize32(&mut self, what: &str) -> FormatResult<usize> {
        self.u32(what).map(|v| v as usize)
    }

    pub fn str(&mut self, what: &str) -> FormatResult<String> {
        let len = self.usize32(what)?;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError {
            offset: start,
            detail: format!("{what} is not valid UTF-8"),
        })
    }

    pub fn expect_end(&self) -> FormatResult<()> {
        if self.pos != self.buf.len() {
            return self.fail(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}
