//! Quantities extracted during the backward sweep.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub mod first_order;
pub mod second_order;

pub use first_order::{FirstOrderRequest, FirstOrderResult};
pub use second_order::{Curvature, KroneckerPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Extension {
    BatchGrad,
    BatchL2,
    SumGradSquared,
    Variance,
    DiagGgn,
    DiagGgnMc,
    Kfac,
    Kflr,
    Kfra,
    DiagHessian,
}

impl Extension {
    pub const ALL: [Extension; 10] = [
        Extension::BatchGrad,
        Extension::BatchL2,
        Extension::SumGradSquared,
        Extension::Variance,
        Extension::DiagGgn,
        Extension::DiagGgnMc,
        Extension::Kfac,
        Extension::Kflr,
        Extension::Kfra,
        Extension::DiagHessian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Extension::BatchGrad => "batchgrad",
            Extension::BatchL2 => "batchl2",
            Extension::SumGradSquared => "sumgradsquared",
            Extension::Variance => "variance",
            Extension::DiagGgn => "diagggn",
            Extension::DiagGgnMc => "diagggn-mc",
            Extension::Kfac => "kfac",
            Extension::Kflr => "kflr",
            Extension::Kfra => "kfra",
            Extension::DiagHessian => "diaghessian",
        }
    }

    pub fn is_first_order(self) -> bool {
        matches!(
            self,
            Extension::BatchGrad | Extension::BatchL2 | Extension::SumGradSquared | Extension::Variance
        )
    }
}

impl fmt::Display for Extension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Extension {
    type Err = Error;

    /// Case-insensitive; `_` and `-` are ignored except in `diagggn-mc`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect();
        let ext = match key.as_str() {
            "batchgrad" => Extension::BatchGrad,
            "batchl2" => Extension::BatchL2,
            "sumgradsquared" | "secondmoment" => Extension::SumGradSquared,
            "variance" => Extension::Variance,
            "diagggn" => Extension::DiagGgn,
            "diagggnmc" => Extension::DiagGgnMc,
            "kfac" => Extension::Kfac,
            "kflr" => Extension::Kflr,
            "kfra" => Extension::Kfra,
            "diaghessian" => Extension::DiagHessian,
            _ => return Err(Error::Config(format!("unknown extension `{s}`"))),
        };
        Ok(ext)
    }
}

/// Parses a comma-separated list; the empty string is the empty list.
pub fn parse_list(s: &str) -> Result<Vec<Extension>, Error> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in Extension::ALL {
            assert_eq!(e.name().parse::<Extension>().unwrap(), e);
        }
        assert_eq!(parse_list("").unwrap(), vec![]);
        assert_eq!(
            parse_list("BatchL2, diag_ggn_mc").unwrap(),
            vec![Extension::BatchL2, Extension::DiagGgnMc]
        );
        assert!("hessian".parse::<Extension>().is_err());
    }
}
