//! Run configuration: one JSON document, individual keys overridable.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::arbiter::PairService;
use crate::error::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Slotted, gap-filled control with optimistic sending.
    Fastpod,
    /// Same, with optimistic sending disabled.
    FastpodNoOpt,
    /// Same arbiter, buffered switches, control packets sent on demand.
    FastpassMode,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Fastpod, Scheme::FastpodNoOpt, Scheme::FastpassMode];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Fastpod => "fastpod",
            Scheme::FastpodNoOpt => "fastpod_no_opt",
            Scheme::FastpassMode => "fastpass_mode",
        }
    }

    pub fn optimistic(self) -> bool {
        self == Scheme::Fastpod
    }

    pub fn zero_buffer(self) -> bool {
        self != Scheme::FastpassMode
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown scheme {s:?}")))
    }
}

/// A link that stops carrying traffic. `element` is a link name such as
/// `agg1->tor2`, or `h3` for a host's uplink.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub element: String,
    #[serde(default)]
    pub at_ps: Option<u64>,
    /// Kill the link just as the cells of this slot reach it.
    #[serde(default)]
    pub at_slot: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockConfig {
    /// Initial offsets are uniform in [-max_offset_ps, max_offset_ps].
    pub max_offset_ps: u64,
    /// Drift rates are uniform in [-drift_ppm, drift_ppm].
    pub drift_ppm: f64,
    /// Resynchronize on every SCHD using the arbiter timestamp and the known
    /// one-way delay.
    pub owd_correction: bool,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            max_offset_ps: 0,
            drift_ppm: 0.0,
            owd_correction: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// `events.csv`: one line per dispatched event.
    pub events: bool,
    /// `occupancy.csv`: every link transmission, for offline audit.
    pub occupancy: bool,
    /// `alloc.csv`: every grant.
    pub alloc: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub k: u32,
    pub link_rate_bps: u64,
    pub prop_ps: u64,
    pub data_cell_bytes: u32,
    pub ctrl_cell_bytes: u32,
    pub guard_slot_ps: u64,
    pub guard_ctrl_ps: u64,
    pub cut_through_ps: u64,
    /// Whole slots the arbiter spends between closing RTS collection and
    /// emitting SCHDs.
    pub processing_slots: u64,
    pub load: f64,
    pub n_flows: usize,
    pub seed: u64,
    /// `size_bytes,cdf` CSV; the shipped distribution when absent.
    pub cdf_file: Option<PathBuf>,
    /// Pre-generated flows; overrides load/n_flows/cdf_file when present.
    pub flows_file: Option<PathBuf>,
    /// Which demand of a (src, dst) pair the arbiter drains first.
    pub pair_service: PairService,
    /// Per output port queue limit of buffered switches.
    pub buffer_bytes: u64,
    /// Abort on a protected-cell collision instead of counting it.
    pub strict: bool,
    /// Draw a fresh random Agg for optimistic cells every slot rather than
    /// once per flow.
    pub optimistic_reroute_per_slot: bool,
    pub faults: Vec<FaultSpec>,
    pub clock: Option<ClockConfig>,
    /// Simulated time limit; 50x the expected makespan when absent.
    pub run_cap_ps: Option<u64>,
    pub trace: TraceConfig,
    /// Parent directory of per-run output directories.
    pub output_root: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Fastpod,
            k: 8,
            link_rate_bps: 100_000_000_000,
            prop_ps: 1_000_000,
            data_cell_bytes: 1500,
            ctrl_cell_bytes: 64,
            guard_slot_ps: 0,
            guard_ctrl_ps: 0,
            cut_through_ps: 0,
            processing_slots: 1,
            load: 0.5,
            n_flows: 10_000,
            seed: 1,
            cdf_file: None,
            flows_file: None,
            pair_service: PairService::ShortestRemaining,
            buffer_bytes: 1_000_000,
            strict: true,
            optimistic_reroute_per_slot: true,
            faults: Vec::new(),
            clock: None,
            run_cap_ps: None,
            trace: TraceConfig::default(),
            output_root: PathBuf::from("runs"),
        }
    }
}

/// Parses a `--set` value: JSON when it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Applies `key=value` overrides; dotted keys reach nested tables.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self, SimError> {
        let mut doc = serde_json::to_value(self)?;
        for s in sets {
            let s = s.as_ref();
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("override {s:?} is not key=value")))?;
            let mut node = &mut doc;
            let parts: Vec<&str> = key.split('.').collect();
            for (n, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| SimError::Config(format!("{key}: {part} is not a table")))?;
                if n + 1 == parts.len() {
                    obj.insert(part.to_string(), parse_value(raw));
                    break;
                }
                let child = obj.entry(part.to_string()).or_insert(Value::Null);
                if child.is_null() {
                    *child = Value::Object(Default::default());
                }
                node = child;
            }
        }
        serde_json::from_value(doc).map_err(|e| SimError::Config(format!("override: {e}")))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.load > 0.0 && self.load.is_finite()) && self.flows_file.is_none() {
            return bad(format!("load must be positive, got {}", self.load));
        }
        if self.n_flows == 0 && self.flows_file.is_none() {
            return bad("n_flows must be at least 1".into());
        }
        let cell_ps = self.data_cell_bytes as u64 * 8_000_000_000_000 / self.link_rate_bps.max(1);
        // A cut-off cell must be known dead before its head reaches the next
        // hop, so a link must be at least one data cell long.
        if self.prop_ps < cell_ps {
            return bad(format!(
                "propagation {} ps is shorter than one data cell ({cell_ps} ps)",
                self.prop_ps
            ));
        }
        if self.scheme == Scheme::FastpassMode && self.buffer_bytes < self.data_cell_bytes as u64 {
            return bad("buffer_bytes must hold at least one data cell".into());
        }
        for f in &self.faults {
            if f.at_ps.is_some() == f.at_slot.is_some() {
                return bad(format!("fault {}: give exactly one of at_ps, at_slot", f.element));
            }
        }
        if let Some(c) = &self.clock {
            if !(c.drift_ppm >= 0.0 && c.drift_ppm.is_finite()) {
                return bad("clock.drift_ppm must be non-negative".into());
            }
        }
        Ok(())
    }

    /// 12 hex digits identifying everything but the seed and output location.
    pub fn hash12(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.output_root = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }

    pub fn run_name(&self) -> String {
        format!("{}-{}-s{}", self.scheme, self.hash12(), self.seed)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root.join(self.run_name())
    }
}
