use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::Representation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Crowd model fit by EM.
    CrowdEm,
    /// Majority vote per (instance, label), then a plain logistic classifier.
    MajorityVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Active,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub aggregation: Aggregation,
    pub selection: Selection,
    pub representation: Representation,
}

/// The eight named strategies: the full method and its seven ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mac,
    McrRd,
    MvAct,
    MvRd,
    ScrAct,
    ScrRd,
    SmvAct,
    SmvRd,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Mac,
        Method::McrRd,
        Method::MvAct,
        Method::MvRd,
        Method::ScrAct,
        Method::ScrRd,
        Method::SmvAct,
        Method::SmvRd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mac => "mac",
            Method::McrRd => "mcr_rd",
            Method::MvAct => "mv_act",
            Method::MvRd => "mv_rd",
            Method::ScrAct => "scr_act",
            Method::ScrRd => "scr_rd",
            Method::SmvAct => "smv_act",
            Method::SmvRd => "smv_rd",
        }
    }

    pub fn config(self) -> StrategyConfig {
        use Aggregation::*;
        use Representation::*;
        use Selection::*;
        let (aggregation, selection, representation) = match self {
            Method::Mac => (CrowdEm, Active, Enhanced),
            Method::McrRd => (CrowdEm, Random, Enhanced),
            Method::MvAct => (MajorityVote, Active, Enhanced),
            Method::MvRd => (MajorityVote, Random, Enhanced),
            Method::ScrAct => (CrowdEm, Active, Plain),
            Method::ScrRd => (CrowdEm, Random, Plain),
            Method::SmvAct => (MajorityVote, Active, Plain),
            Method::SmvRd => (MajorityVote, Random, Plain),
        };
        StrategyConfig {
            aggregation,
            selection,
            representation,
        }
    }

    pub fn from_config(config: StrategyConfig) -> Method {
        *Method::ALL
            .iter()
            .find(|m| m.config() == config)
            .expect("every combination is a named method")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let key = s.trim().to_ascii_lowercase().replace(['+', '-'], "_");
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_configs_are_distinct() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(Method::from_config(m.config()), m);
        }
        assert_eq!("SMV+RD".parse::<Method>().unwrap(), Method::SmvRd);
        assert!("foo".parse::<Method>().is_err());
        let mac = Method::Mac.config();
        assert_eq!(
            (mac.aggregation, mac.selection, mac.representation),
            (Aggregation::CrowdEm, Selection::Active, Representation::Enhanced)
        );
    }
}
