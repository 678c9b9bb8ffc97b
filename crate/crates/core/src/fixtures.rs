//! Bundled example inputs.
//!
//! The Coleman panel counts are a 4x4 table of two attitude questions asked
//! at two times; rows give items 1 and 2, columns items 3 and 4. As printed
//! in the original source the table sums to 6458, although the stated sample
//! size is 6658. [`COLEMAN_COUNTS`] restores the row `10` cells of the second
//! time point to 292 and 283, which gives N = 6658 and reproduces the
//! published estimates; [`COLEMAN_PRINTED_COUNTS`] keeps the table as printed.

use crate::error::Result;
use crate::io::{parse_counts, parse_model_spec};
use crate::model::{ModelSpec, ObservedCounts, ParameterVector};

/// Four classes, four items, eight item parameters, four class parameters.
pub const COLEMAN_MODEL: &str = include_str!("../fixtures/coleman.json");
pub const COLEMAN_COUNTS: &str = include_str!("../fixtures/coleman.csv");
pub const COLEMAN_PRINTED_COUNTS: &str = include_str!("../fixtures/coleman_printed.csv");
/// Ten classes, five items, seven item parameters, six class parameters.
pub const SIMULATION_MODEL: &str = include_str!("../fixtures/simulation_model.json");
/// [`SIMULATION_MODEL`] with an eighth item parameter loading on items of classes 1 to 5.
pub const CONTAMINANT_MODEL: &str = include_str!("../fixtures/contaminant_model.json");

pub fn coleman_spec() -> ModelSpec {
    parse_model_spec(COLEMAN_MODEL).expect("bundled fixture parses")
}

pub fn coleman_counts() -> ObservedCounts {
    parse_counts(COLEMAN_COUNTS, 4).expect("bundled fixture parses")
}

pub fn coleman_printed_counts() -> ObservedCounts {
    parse_counts(COLEMAN_PRINTED_COUNTS, 4).expect("bundled fixture parses")
}

pub fn simulation_spec() -> ModelSpec {
    parse_model_spec(SIMULATION_MODEL).expect("bundled fixture parses")
}

/// True parameters of [`simulation_spec`].
pub fn simulation_theta0() -> ParameterVector {
    ParameterVector::new(
        vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0],
        vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
    )
}

pub fn contaminant_spec() -> ModelSpec {
    parse_model_spec(CONTAMINANT_MODEL).expect("bundled fixture parses")
}

/// Contaminant parameters: the true values with `lambda_8` appended.
pub fn contaminant_theta(lambda8: f64) -> ParameterVector {
    let mut theta = simulation_theta0();
    theta.lambda.push(lambda8);
    theta
}

/// The six `lambda_8` values listed for the contaminants. The last entry is
/// -1 in the text and -1.5 in the table header; both are accepted by
/// [`contaminant_theta`] and this list follows the text.
pub const CONTAMINANT_LAMBDA8: [f64; 6] = [0.5, 1.0, 1.5, 2.0, -0.5, -1.0];

/// Builds the contamination of [`simulation_spec`] at `lambda8` and `epsilon`.
pub fn contamination(lambda8: f64, epsilon: f64) -> Result<crate::simulation::ContaminationSpec> {
    Ok(crate::simulation::ContaminationSpec {
        spec: contaminant_spec(),
        theta: contaminant_theta(lambda8),
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse() {
        let spec = coleman_spec();
        assert_eq!((spec.m, spec.k, spec.t, spec.u), (4, 4, 8, 4));
        assert_eq!(coleman_counts().total(), 6658);
        assert_eq!(coleman_printed_counts().total(), 6458);
        assert_eq!(coleman_printed_counts().counts[0], 1090);
        assert_eq!(coleman_printed_counts().counts[1], 641);
        assert_eq!(coleman_printed_counts().counts[15], 942);
        let s = simulation_spec();
        assert_eq!((s.m, s.k, s.t, s.u), (10, 5, 7, 6));
        assert_eq!(contaminant_spec().t, 8);
    }
}
