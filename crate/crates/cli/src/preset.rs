//! Named method variants: the baselines and the two SEA-ER configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use seaer_core::continual::{ExperimentConfig, Method};
use seaer_core::selection::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Bare,
    Joint,
    /// k-center greedy buffer with kernel-mean-matching weights.
    Seaer,
    /// k-center greedy buffer with unit weights.
    SeaerNosa,
    ErRandom,
    ErDegree,
    ErRep,
    ErDegreeDistance,
    ErKcenterSampling,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Bare,
        Preset::Joint,
        Preset::Seaer,
        Preset::SeaerNosa,
        Preset::ErRandom,
        Preset::ErDegree,
        Preset::ErRep,
        Preset::ErDegreeDistance,
        Preset::ErKcenterSampling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Bare => "bare",
            Preset::Joint => "joint",
            Preset::Seaer => "seaer",
            Preset::SeaerNosa => "seaer_nosa",
            Preset::ErRandom => "er_random",
            Preset::ErDegree => "er_degree",
            Preset::ErRep => "er_rep",
            Preset::ErDegreeDistance => "er_degree_distance",
            Preset::ErKcenterSampling => "er_kcenter_sampling",
        }
    }

    fn replay_strategy(self) -> Option<Strategy> {
        match self {
            Preset::Bare | Preset::Joint => None,
            Preset::Seaer | Preset::SeaerNosa => Some(Strategy::KcenterGreedy),
            Preset::ErRandom => Some(Strategy::Random),
            Preset::ErDegree => Some(Strategy::TopDegree),
            Preset::ErRep => Some(Strategy::Representation),
            Preset::ErDegreeDistance => Some(Strategy::DegreeDistance),
            Preset::ErKcenterSampling => Some(Strategy::KcenterSampling),
        }
    }

    /// Set method, strategy and the alignment flag; other fields are kept.
    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut out = cfg.clone();
        match self {
            Preset::Bare => out.method = Method::Bare,
            Preset::Joint => out.method = Method::Joint,
            _ => out.method = Method::Replay,
        }
        if let Some(s) = self.replay_strategy() {
            out.strategy = s;
        }
        out.alignment_enabled = self == Preset::Seaer;
        out
    }

    /// Name of the variant a config runs: a preset name, with a `_sa` suffix
    /// for aligned replay outside the presets.
    pub fn label(cfg: &ExperimentConfig) -> String {
        match cfg.method {
            Method::Bare => "bare".into(),
            Method::Joint => "joint".into(),
            Method::Replay => {
                let base = Preset::ALL
                    .into_iter()
                    .find(|p| p.replay_strategy() == Some(cfg.strategy) && *p != Preset::Seaer)
                    .expect("every strategy has a preset");
                match (base, cfg.alignment_enabled) {
                    (Preset::SeaerNosa, true) => "seaer".into(),
                    (p, true) => format!("{}_sa", p.as_str()),
                    (p, false) => p.as_str().into(),
                }
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}
