//! The solver's tunable parameter space and its fixed-order vector encoding.
//!
//! Encoded layout (19 entries):
//!
//! | slot  | field                   | encoding                                  |
//! |-------|-------------------------|-------------------------------------------|
//! | 0–2   | node_selection          | one-hot `[best_bound, dfs, hybrid]`       |
//! | 3–5   | branching_rule          | one-hot `[most_infeasible, pseudocost, random]` |
//! | 6     | branch_direction_bias   | value in `[0,1]`                          |
//! | 7     | rounding_freq           | value in `[0,1]`                          |
//! | 8–10  | diving_mode             | one-hot `[off, fractional, coefficient]`  |
//! | 11    | diving_freq             | value in `[0,1]`                          |
//! | 12    | presolve                | toggle, `≥ 0.5` means on                  |
//! | 13    | propagation_rounds      | value in `[0,1]`                          |
//! | 14–15 | lp_pricing              | one-hot `[bland, dantzig]`                |
//! | 16    | pseudocost_init         | value in `[0,1]`                          |
//! | 17    | plunge_depth            | value in `[0,1]`                          |
//! | 18    | cutoff_tightening       | toggle, `≥ 0.5` means on                  |
//!
//! Decoding picks the first maximal entry of each one-hot group.

use rand::Rng;
use thiserror::Error;

use crate::lp::Pricing;

pub const CONFIG_DIM: usize = 19;

/// `(offset, size)` of each categorical one-hot group.
pub const CATEGORICAL_GROUPS: [(usize, usize); 4] = [(0, 3), (3, 3), (8, 3), (14, 2)];
/// Slots holding numeric values or on/off toggles.
pub const SCALAR_SLOTS: [usize; 8] = [6, 7, 11, 12, 13, 16, 17, 18];

pub const FIELD_NAMES: [&str; 12] = [
    "node_selection",
    "branching_rule",
    "branch_direction_bias",
    "rounding_freq",
    "diving_mode",
    "diving_freq",
    "presolve",
    "propagation_rounds",
    "lp_pricing",
    "pseudocost_init",
    "plunge_depth",
    "cutoff_tightening",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeSelection {
    BestBound,
    Dfs,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchingRule {
    MostInfeasible,
    Pseudocost,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivingMode {
    Off,
    Fractional,
    Coefficient,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config vector must have {CONFIG_DIM} entries, got {0}")]
    BadLength(usize),
    #[error("config entry {0} is not finite")]
    NonFinite(usize),
    #[error("numeric field `{0}` outside [0,1]")]
    OutOfRange(&'static str),
    #[error("config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub node_selection: NodeSelection,
    pub branching_rule: BranchingRule,
    /// Probability of exploring the `x_j = 1` child first.
    pub branch_direction_bias: f64,
    /// `0` disables rounding; otherwise it runs every `⌊1 + 9(1 − f)⌋` nodes.
    pub rounding_freq: f64,
    pub diving_mode: DivingMode,
    /// Same period mapping as `rounding_freq`.
    pub diving_freq: f64,
    pub presolve: bool,
    /// Node propagation rounds `round(5 p)`.
    pub propagation_rounds: f64,
    pub lp_pricing: Pricing,
    pub pseudocost_init: f64,
    /// Hybrid plunging depth `round(8 p)`.
    pub plunge_depth: f64,
    pub cutoff_tightening: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        default_config()
    }
}

pub fn default_config() -> SolverConfig {
    SolverConfig {
        node_selection: NodeSelection::BestBound,
        branching_rule: BranchingRule::MostInfeasible,
        branch_direction_bias: 0.5,
        rounding_freq: 0.5,
        diving_mode: DivingMode::Off,
        diving_freq: 0.5,
        presolve: true,
        propagation_rounds: 0.4,
        lp_pricing: Pricing::Dantzig,
        pseudocost_init: 0.5,
        plunge_depth: 0.25,
        cutoff_tightening: true,
    }
}

/// Heuristic period for a frequency in `[0,1]`; `None` when disabled.
pub fn heuristic_period(freq: f64) -> Option<u64> {
    if freq <= 0.0 {
        None
    } else {
        Some((1.0 + 9.0 * (1.0 - freq.min(1.0))).floor() as u64)
    }
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let numeric = [
            ("branch_direction_bias", self.branch_direction_bias),
            ("rounding_freq", self.rounding_freq),
            ("diving_freq", self.diving_freq),
            ("propagation_rounds", self.propagation_rounds),
            ("pseudocost_init", self.pseudocost_init),
            ("plunge_depth", self.plunge_depth),
        ];
        for (name, v) in numeric {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::OutOfRange(name));
            }
        }
        Ok(())
    }

    pub fn propagation_round_count(&self) -> usize {
        (5.0 * self.propagation_rounds).round() as usize
    }

    pub fn plunge_depth_count(&self) -> usize {
        (8.0 * self.plunge_depth).round() as usize
    }

    pub fn encode(&self) -> [f64; CONFIG_DIM] {
        let mut v = [0.0; CONFIG_DIM];
        v[match self.node_selection {
            NodeSelection::BestBound => 0,
            NodeSelection::Dfs => 1,
            NodeSelection::Hybrid => 2,
        }] = 1.0;
        v[3 + match self.branching_rule {
            BranchingRule::MostInfeasible => 0,
            BranchingRule::Pseudocost => 1,
            BranchingRule::Random => 2,
        }] = 1.0;
        v[6] = self.branch_direction_bias;
        v[7] = self.rounding_freq;
        v[8 + match self.diving_mode {
            DivingMode::Off => 0,
            DivingMode::Fractional => 1,
            DivingMode::Coefficient => 2,
        }] = 1.0;
        v[11] = self.diving_freq;
        v[12] = if self.presolve { 1.0 } else { 0.0 };
        v[13] = self.propagation_rounds;
        v[14 + match self.lp_pricing {
            Pricing::Bland => 0,
            Pricing::Dantzig => 1,
        }] = 1.0;
        v[16] = self.pseudocost_init;
        v[17] = self.plunge_depth;
        v[18] = if self.cutoff_tightening { 1.0 } else { 0.0 };
        v
    }

    /// Decodes a score vector: argmax per one-hot group (first option wins
    /// ties), numeric slots clamped to `[0,1]`, toggles thresholded at 0.5.
    pub fn decode(v: &[f64]) -> Result<Self, ConfigError> {
        if v.len() != CONFIG_DIM {
            return Err(ConfigError::BadLength(v.len()));
        }
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(ConfigError::NonFinite(k));
        }
        let clamp = |x: f64| x.clamp(0.0, 1.0);
        Ok(SolverConfig {
            node_selection: [
                NodeSelection::BestBound,
                NodeSelection::Dfs,
                NodeSelection::Hybrid,
            ][first_argmax(&v[0..3])],
            branching_rule: [
                BranchingRule::MostInfeasible,
                BranchingRule::Pseudocost,
                BranchingRule::Random,
            ][first_argmax(&v[3..6])],
            branch_direction_bias: clamp(v[6]),
            rounding_freq: clamp(v[7]),
            diving_mode: [DivingMode::Off, DivingMode::Fractional, DivingMode::Coefficient]
                [first_argmax(&v[8..11])],
            diving_freq: clamp(v[11]),
            presolve: v[12] >= 0.5,
            propagation_rounds: clamp(v[13]),
            lp_pricing: [Pricing::Bland, Pricing::Dantzig][first_argmax(&v[14..16])],
            pseudocost_init: clamp(v[16]),
            plunge_depth: clamp(v[17]),
            cutoff_tightening: v[18] >= 0.5,
        })
    }

    /// Uniformly random point of the space.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut cfg = default_config();
        for field in 0..FIELD_NAMES.len() {
            cfg.resample_field(field, rng);
        }
        cfg
    }

    /// Resamples one field (index into [`FIELD_NAMES`]) uniformly.
    pub fn resample_field<R: Rng>(&mut self, field: usize, rng: &mut R) {
        match field {
            0 => {
                self.node_selection =
                    [NodeSelection::BestBound, NodeSelection::Dfs, NodeSelection::Hybrid]
                        [rng.gen_range(0..3)]
            }
            1 => {
                self.branching_rule = [
                    BranchingRule::MostInfeasible,
                    BranchingRule::Pseudocost,
                    BranchingRule::Random,
                ][rng.gen_range(0..3)]
            }
            2 => self.branch_direction_bias = rng.gen(),
            3 => self.rounding_freq = rng.gen(),
            4 => {
                self.diving_mode =
                    [DivingMode::Off, DivingMode::Fractional, DivingMode::Coefficient]
                        [rng.gen_range(0..3)]
            }
            5 => self.diving_freq = rng.gen(),
            6 => self.presolve = rng.gen(),
            7 => self.propagation_rounds = rng.gen(),
            8 => self.lp_pricing = [Pricing::Bland, Pricing::Dantzig][rng.gen_range(0..2)],
            9 => self.pseudocost_init = rng.gen(),
            10 => self.plunge_depth = rng.gen(),
            11 => self.cutoff_tightening = rng.gen(),
            _ => panic!("field index {field} out of range"),
        }
    }

    /// `key = value` text form, one field per line.
    pub fn to_text(&self) -> String {
        let v = self.encode();
        v.iter()
            .enumerate()
            .map(|(k, x)| format!("slot{k} = {x}\n"))
            .collect()
    }

    /// Parses either the `to_text` form or a single line of 19
    /// comma/whitespace separated numbers.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut values = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let payload = line.split_once('=').map(|(_, v)| v).unwrap_or(line);
            for tok in payload.split(|c: char| c == ',' || c.is_whitespace()) {
                if tok.is_empty() {
                    continue;
                }
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| ConfigError::Parse(format!("`{tok}`: {e}")))?,
                );
            }
        }
        Self::decode(&values)
    }
}
