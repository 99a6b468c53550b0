//! Complex samples and rate-annotated streams.

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{requantize, FixedSample, QFormat};

/// Numeric backend of a stream or chain run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Bit-accurate two's-complement datapath.
    Fixed,
    /// Double-precision reference datapath.
    Float,
}

/// One complex sample in either backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComplexSample {
    Fixed { i: FixedSample, q: FixedSample },
    Float(Complex64),
}

impl ComplexSample {
    pub fn fixed(i: FixedSample, q: FixedSample) -> Result<Self> {
        if i.format() != q.format() {
            return Err(Error::LayoutMismatch(format!(
                "I is {:?} but Q is {:?}",
                i.format(),
                q.format()
            )));
        }
        Ok(ComplexSample::Fixed { i, q })
    }

    pub fn backend(&self) -> Backend {
        match self {
            ComplexSample::Fixed { .. } => Backend::Fixed,
            ComplexSample::Float(_) => Backend::Float,
        }
    }

    pub fn to_complex64(&self) -> Complex64 {
        match *self {
            ComplexSample::Fixed { i, q } => Complex64::new(i.to_f64(), q.to_f64()),
            ComplexSample::Float(z) => z,
        }
    }

    fn format(&self) -> Option<QFormat> {
        match self {
            ComplexSample::Fixed { i, .. } => Some(i.format()),
            ComplexSample::Float(_) => None,
        }
    }
}

/// `a · b`. In fixed mode both operands must share one bit layout; the result
/// keeps that layout, computed from the exact integer cross products and
/// rounded once.
pub fn complex_mul(a: ComplexSample, b: ComplexSample) -> Result<ComplexSample> {
    match (a, b) {
        (ComplexSample::Float(x), ComplexSample::Float(y)) => Ok(ComplexSample::Float(x * y)),
        (ComplexSample::Fixed { .. }, ComplexSample::Fixed { .. }) => {
            let fmt = a.format().unwrap();
            if b.format() != Some(fmt) {
                return Err(Error::LayoutMismatch(format!(
                    "{:?} times {:?}",
                    fmt,
                    b.format().unwrap()
                )));
            }
            Ok(complex_mul_into(a, b, fmt)?.0)
        }
        _ => Err(Error::BackendMismatch {
            expected: a.backend(),
            found: b.backend(),
        }),
    }
}

/// Fixed-point complex product into an explicit output layout. Returns the
/// number of saturated components alongside the result.
pub fn complex_mul_into(a: ComplexSample, b: ComplexSample, out: QFormat) -> Result<(ComplexSample, u32)> {
    match (a, b) {
        (ComplexSample::Fixed { i: ai, q: aq }, ComplexSample::Fixed { i: bi, q: bq }) => {
            let frac = ai.format().frac + bi.format().frac;
            let (ai, aq, bi, bq) = (ai.value() as i128, aq.value() as i128, bi.value() as i128, bq.value() as i128);
            let (re, s1) = requantize(ai * bi - aq * bq, frac, out);
            let (im, s2) = requantize(ai * bq + aq * bi, frac, out);
            let sample = ComplexSample::Fixed {
                i: FixedSample::new(re, out)?,
                q: FixedSample::new(im, out)?,
            };
            Ok((sample, s1 as u32 + s2 as u32))
        }
        (ComplexSample::Float(x), ComplexSample::Float(y)) => Ok((ComplexSample::Float(x * y), 0)),
        _ => Err(Error::BackendMismatch {
            expected: a.backend(),
            found: b.backend(),
        }),
    }
}

/// Storage for a stream: raw integers with one shared layout, or doubles.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Fixed { format: QFormat, data: Vec<Complex<i64>> },
    Float(Vec<Complex64>),
}

/// A sequence of complex samples at a known rate, positioned on the global
/// sample index of its rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqStream {
    pub samples: Samples,
    pub sample_rate: f64,
    /// Global index of the first sample.
    pub origin_index: u64,
}

impl IqStream {
    pub fn new(samples: Samples, sample_rate: f64, origin_index: u64) -> Result<Self> {
        if !sample_rate.is_finite() || sample_rate <= 0.0 {
            return Err(Error::Unsupported(format!("sample rate {sample_rate} must be positive")));
        }
        if let Samples::Fixed { format, data } = &samples {
            if let Some(k) = data.iter().position(|z| !format.contains(z.re) || !format.contains(z.im)) {
                return Err(Error::LayoutMismatch(format!("sample {k} does not fit {format:?}")));
            }
        }
        Ok(IqStream {
            samples,
            sample_rate,
            origin_index,
        })
    }

    pub fn float(data: Vec<Complex64>, sample_rate: f64) -> Self {
        IqStream {
            samples: Samples::Float(data),
            sample_rate,
            origin_index: 0,
        }
    }

    pub fn fixed(format: QFormat, data: Vec<Complex<i64>>, sample_rate: f64) -> Result<Self> {
        IqStream::new(Samples::Fixed { format, data }, sample_rate, 0)
    }

    pub fn backend(&self) -> Backend {
        match self.samples {
            Samples::Fixed { .. } => Backend::Fixed,
            Samples::Float(_) => Backend::Float,
        }
    }

    pub fn format(&self) -> Option<QFormat> {
        match self.samples {
            Samples::Fixed { format, .. } => Some(format),
            Samples::Float(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Fixed { data, .. } => data.len(),
            Samples::Float(data) => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, k: usize) -> Option<ComplexSample> {
        match &self.samples {
            Samples::Fixed { format, data } => data.get(k).map(|z| ComplexSample::Fixed {
                i: FixedSample::new(z.re, *format).unwrap(),
                q: FixedSample::new(z.im, *format).unwrap(),
            }),
            Samples::Float(data) => data.get(k).map(|&z| ComplexSample::Float(z)),
        }
    }

    pub fn to_complex64(&self) -> Vec<Complex64> {
        match &self.samples {
            Samples::Fixed { format, data } => {
                let lsb = format.lsb();
                data.iter()
                    .map(|z| Complex64::new(z.re as f64 * lsb, z.im as f64 * lsb))
                    .collect()
            }
            Samples::Float(data) => data.clone(),
        }
    }

    /// Index of the first sample with a nonzero Q component.
    pub fn first_nonreal(&self) -> Option<usize> {
        match &self.samples {
            Samples::Fixed { data, .. } => data.iter().position(|z| z.im != 0),
            Samples::Float(data) => data.iter().position(|z| z.im != 0.0),
        }
    }

    pub fn is_real(&self) -> bool {
        self.first_nonreal().is_none()
    }

    /// Sub-stream `[start, start + len)`, keeping the global index consistent.
    pub fn slice(&self, start: usize, len: usize) -> IqStream {
        let end = (start + len).min(self.len());
        let start = start.min(end);
        let samples = match &self.samples {
            Samples::Fixed { format, data } => Samples::Fixed {
                format: *format,
                data: data[start..end].to_vec(),
            },
            Samples::Float(data) => Samples::Float(data[start..end].to_vec()),
        };
        IqStream {
            samples,
            sample_rate: self.sample_rate,
            origin_index: self.origin_index + start as u64,
        }
    }

    /// Checks that `other` can be processed alongside `self` in one stage.
    pub fn ensure_same_backend(&self, other: &IqStream) -> Result<()> {
        if self.backend() != other.backend() {
            return Err(Error::BackendMismatch {
                expected: self.backend(),
                found: other.backend(),
            });
        }
        if self.format() != other.format() {
            return Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.format(),
                other.format()
            )));
        }
        Ok(())
    }
}
