//! The bundled worked example: plant, exosystem, switching signal, and the
//! reference objects (Lyapunov matrix, output injections,
//! subspace bases, friend feedbacks).

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::{from_rows, Matrix};
use crate::model::{parse_problem, Exosystem, SwitchingPlant, SwitchingSignal};

pub const EXAMPLE_PROBLEM_JSON: &str = include_str!("../fixtures/worked_example.json");
pub const EXAMPLE_REFERENCE_JSON: &str = include_str!("../fixtures/reference_objects.json");
pub const EXAMPLE_SIGNAL: &str = "1:0-29,2:30-69,1:70-99";
pub const EXAMPLE_HORIZON: usize = 100;

pub fn example_problem() -> (SwitchingPlant, Exosystem) {
    parse_problem(EXAMPLE_PROBLEM_JSON).expect("bundled problem fixture is valid")
}

pub fn example_signal() -> SwitchingSignal {
    SwitchingSignal::parse(EXAMPLE_SIGNAL).expect("bundled signal is valid")
}

/// Reference objects, printed to four or five digits.
#[derive(Debug, Clone)]
pub struct ReferenceObjects {
    /// Common Lyapunov matrix for the plant modes.
    pub q: Matrix,
    /// Output injections, one per mode.
    pub g: Vec<Matrix>,
    /// Basis of the maximal robust controlled invariant subspace.
    pub vstar: Matrix,
    /// Basis of the regulation subspace.
    pub v: Matrix,
    /// Friend feedbacks, one per mode.
    pub f: Vec<Matrix>,
}

#[derive(Deserialize)]
struct ReferenceFile {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Vstar")]
    vstar: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    f: Vec<Vec<Vec<f64>>>,
}

pub fn parse_reference(text: &str) -> Result<ReferenceObjects> {
    let file: ReferenceFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(ReferenceObjects {
        q: from_rows(&file.q)?,
        g: file.g.iter().map(|m| from_rows(m)).collect::<Result<_>>()?,
        vstar: from_rows(&file.vstar)?,
        v: from_rows(&file.v)?,
        f: file.f.iter().map(|m| from_rows(m)).collect::<Result<_>>()?,
    })
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<ReferenceObjects> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_reference(&text)
}

pub fn example_reference() -> ReferenceObjects {
    parse_reference(EXAMPLE_REFERENCE_JSON).expect("bundled reference fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_shapes() {
        let r = example_reference();
        assert_eq!(r.q.shape(), (6, 6));
        assert_eq!(r.g.len(), 2);
        assert!(r.g.iter().all(|g| g.shape() == (10, 2)));
        assert_eq!(r.vstar.shape(), (10, 8));
        assert_eq!(r.v.shape(), (10, 4));
        assert!(r.f.iter().all(|f| f.shape() == (3, 10)));
    }
}
