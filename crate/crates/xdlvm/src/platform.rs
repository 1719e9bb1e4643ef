//! Virtual liquid-handling hardware.
//!
//! A platform is a set of named vessels plus an overhead camera. Liquid
//! moves only through [`Platform::transfer`], which conserves volume
//! exactly: volumes are stored as integer microlitres, so no sequence of
//! transfers can create or destroy liquid through rounding. The camera
//! reports one of five colour classes per vessel and is the only noisy
//! component; its noise is reproducible from a seed and an observation
//! counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Discrete colour classes the camera can report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColourClass {
    White,
    Orange,
    Blue,
    Green,
    Unknown,
}

impl ColourClass {
    pub const ALL: [ColourClass; 5] = [
        ColourClass::White,
        ColourClass::Orange,
        ColourClass::Blue,
        ColourClass::Green,
        ColourClass::Unknown,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ColourClass::White => "white",
            ColourClass::Orange => "orange",
            ColourClass::Blue => "blue",
            ColourClass::Green => "green",
            ColourClass::Unknown => "unknown",
        }
    }

    /// Single-letter form used by the trace renderer.
    pub fn letter(&self) -> char {
        match self {
            ColourClass::White => 'W',
            ColourClass::Orange => 'O',
            ColourClass::Blue => 'B',
            ColourClass::Green => 'G',
            ColourClass::Unknown => 'U',
        }
    }

    pub fn parse(text: &str) -> Option<ColourClass> {
        match text {
            "white" => Some(ColourClass::White),
            "orange" => Some(ColourClass::Orange),
            "blue" => Some(ColourClass::Blue),
            "green" => Some(ColourClass::Green),
            "unknown" => Some(ColourClass::Unknown),
            _ => None,
        }
    }

    /// Nominal RGB of the pure reagent for this class. `Unknown` has no
    /// reagent and no reference point.
    pub fn reference_rgb(&self) -> Option<[u8; 3]> {
        match self {
            ColourClass::White => Some([245, 245, 245]),
            ColourClass::Orange => Some([230, 140, 30]),
            ColourClass::Blue => Some([40, 80, 200]),
            ColourClass::Green => Some([40, 160, 70]),
            ColourClass::Unknown => None,
        }
    }
}

impl fmt::Display for ColourClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// A liquid volume, stored as whole microlitres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Hash)]
pub struct Volume(u64);

impl Volume {
    pub const ZERO: Volume = Volume(0);

    pub fn from_microlitres(ul: u64) -> Volume {
        Volume(ul)
    }

    /// Converts from millilitres, rounding to the nearest microlitre.
    pub fn from_ml(ml: f64) -> Result<Volume, PlatformError> {
        if !ml.is_finite() || ml < 0.0 {
            return Err(PlatformError::InvalidVolume {
                text: format!("{ml}"),
            });
        }
        let ul = (ml * 1000.0).round();
        if ul > u64::MAX as f64 {
            return Err(PlatformError::InvalidVolume {
                text: format!("{ml}"),
            });
        }
        Ok(Volume(ul as u64))
    }

    pub fn as_microlitres(&self) -> u64 {
        self.0
    }

    pub fn as_ml(&self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: Volume) -> Option<Volume> {
        self.0.checked_add(other.0).map(Volume)
    }

    pub fn saturating_sub(self, other: Volume) -> Volume {
        Volume(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for Volume {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} mL", self.as_ml())
    }
}

/// Role a vessel plays in the machine layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VesselRole {
    Tape(u32),
    Head(u32),
    State(u32),
    Stock(ColourClass),
    Waste,
    Reactor,
    Generic,
}

impl VesselRole {
    pub fn is_stock(&self) -> bool {
        matches!(self, VesselRole::Stock(_))
    }
}

/// A parcel of liquid with a colour.
#[derive(Debug, Clone, PartialEq)]
pub struct LiquidSample {
    pub reagent: String,
    pub volume: Volume,
    pub rgb: [u8; 3],
}

impl LiquidSample {
    pub fn new(reagent: impl Into<String>, volume: Volume, rgb: [u8; 3]) -> Self {
        LiquidSample {
            reagent: reagent.into(),
            volume,
            rgb,
        }
    }
}

/// A single container on the deck.
#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub id: String,
    pub role: VesselRole,
    /// Maximum fill. `None` means unbounded (waste, stocks).
    pub capacity: Option<Volume>,
    pub contents: Vec<LiquidSample>,
    /// Scalar sensors other than the camera (temperature, pH, ...).
    pub attributes: BTreeMap<String, f64>,
}

impl Vessel {
    pub fn new(id: impl Into<String>, role: VesselRole, capacity: Option<Volume>) -> Self {
        Vessel {
            id: id.into(),
            role,
            capacity,
            contents: Vec::new(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn total_volume(&self) -> Volume {
        let ul = self
            .contents
            .iter()
            .fold(0u64, |acc, s| acc.saturating_add(s.volume.as_microlitres()));
        Volume(ul)
    }

    pub fn is_empty(&self) -> bool {
        self.total_volume().is_zero()
    }

    /// Volume-weighted mean colour of the contents, rounded half-up per
    /// channel. `None` when empty.
    pub fn mixed_rgb(&self) -> Option<[u8; 3]> {
        let total = self.total_volume().as_microlitres();
        if total == 0 {
            return None;
        }
        let mut rgb = [0u8; 3];
        for ch in 0..3 {
            let weighted: u128 = self
                .contents
                .iter()
                .map(|s| s.volume.as_microlitres() as u128 * s.rgb[ch] as u128)
                .sum();
            rgb[ch] = ((weighted + total as u128 / 2) / total as u128) as u8;
        }
        Some(rgb)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlatformError {
    #[error("unknown vessel {0:?}")]
    UnknownVessel(String),
    #[error("vessel {vessel:?} holds {available_ml} mL, cannot draw {requested_ml} mL")]
    InsufficientVolume {
        vessel: String,
        requested_ml: f64,
        available_ml: f64,
    },
    #[error("vessel {vessel:?} has {free_ml} mL of headroom, cannot accept {requested_ml} mL")]
    CapacityExceeded {
        vessel: String,
        requested_ml: f64,
        free_ml: f64,
    },
    #[error("invalid volume {text:?}")]
    InvalidVolume { text: String },
    #[error("cannot transfer from vessel {0:?} to itself")]
    SameVessel(String),
    #[error("vessel {0:?} is a stock and cannot receive liquid")]
    StockDestination(String),
    #[error("observation space size does not fit in 128 bits")]
    ObservationSpaceOverflow,
    #[error("invalid platform layout: {0}")]
    InvalidLayout(String),
    #[error("invalid platform description: {0}")]
    InvalidConfig(String),
}

const CHANNEL_BIN_WIDTH: f64 = 51.0;
const CLASSIFY_MAX_DISTANCE: u32 = 2;

/// Reference palette in binned coordinates, one entry per concrete class.
const BINNED_REFERENCES: [(ColourClass, [u8; 3]); 4] = [
    (ColourClass::White, [4, 4, 4]),
    (ColourClass::Orange, [4, 2, 0]),
    (ColourClass::Blue, [0, 1, 3]),
    (ColourClass::Green, [0, 3, 1]),
];

/// Quantises one channel into five bins of width 51 (the last bin absorbs
/// the 204..=255 remainder).
pub fn bin_channel(value: f64) -> u8 {
    let clamped = value.clamp(0.0, 255.0);
    ((clamped / CHANNEL_BIN_WIDTH) as u8).min(4)
}

pub fn bin_rgb(rgb: [f64; 3]) -> [u8; 3] {
    [bin_channel(rgb[0]), bin_channel(rgb[1]), bin_channel(rgb[2])]
}

fn classify_binned(bins: [u8; 3]) -> ColourClass {
    let mut best = ColourClass::Unknown;
    let mut best_distance = u32::MAX;
    let mut tied = false;
    for (class, reference) in BINNED_REFERENCES {
        let distance: u32 = (0..3)
            .map(|ch| (bins[ch] as i32 - reference[ch] as i32).unsigned_abs())
            .sum();
        if distance < best_distance {
            best = class;
            best_distance = distance;
            tied = false;
        } else if distance == best_distance {
            tied = true;
        }
    }
    if tied || best_distance > CLASSIFY_MAX_DISTANCE {
        ColourClass::Unknown
    } else {
        best
    }
}

/// Classifies a noise-free RGB triple: quantise each channel, then take the
/// nearest reference by L1 distance, refusing ties and far-away points.
pub fn classify_rgb(rgb: [u8; 3]) -> ColourClass {
    classify_binned(bin_rgb([rgb[0] as f64, rgb[1] as f64, rgb[2] as f64]))
}

/// Number of distinct observable machine states: `head_positions` choices
/// for the head times one class per region of interest.
pub fn observation_space_size(
    head_positions: u64,
    rois: u32,
    classes: u64,
) -> Result<u128, PlatformError> {
    let mut acc: u128 = 1;
    for _ in 0..rois {
        acc = acc
            .checked_mul(classes as u128)
            .ok_or(PlatformError::ObservationSpaceOverflow)?;
    }
    acc.checked_mul(head_positions as u128)
        .ok_or(PlatformError::ObservationSpaceOverflow)
}

/// Per-vessel view used in trace snapshots and run summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselSnapshot {
    pub colour: ColourClass,
    pub volume_ml: f64,
}

/// The virtual deck: vessels, camera, and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Platform {
    vessels: BTreeMap<String, Vessel>,
    pub camera_noise_sigma: f64,
    pub rng_seed: u64,
    observations: u64,
    dispensed: BTreeMap<String, Volume>,
}

impl Platform {
    pub fn new(camera_noise_sigma: f64, rng_seed: u64) -> Self {
        Platform {
            vessels: BTreeMap::new(),
            camera_noise_sigma,
            rng_seed,
            observations: 0,
            dispensed: BTreeMap::new(),
        }
    }

    pub fn add_vessel(&mut self, vessel: Vessel) -> Result<(), PlatformError> {
        if self.vessels.contains_key(&vessel.id) {
            return Err(PlatformError::InvalidLayout(format!(
                "duplicate vessel id {:?}",
                vessel.id
            )));
        }
        self.vessels.insert(vessel.id.clone(), vessel);
        Ok(())
    }

    pub fn vessel(&self, id: &str) -> Result<&Vessel, PlatformError> {
        self.vessels
            .get(id)
            .ok_or_else(|| PlatformError::UnknownVessel(id.to_string()))
    }

    pub fn vessel_mut(&mut self, id: &str) -> Result<&mut Vessel, PlatformError> {
        self.vessels
            .get_mut(id)
            .ok_or_else(|| PlatformError::UnknownVessel(id.to_string()))
    }

    pub fn has_vessel(&self, id: &str) -> bool {
        self.vessels.contains_key(id)
    }

    pub fn vessels(&self) -> impl Iterator<Item = &Vessel> {
        self.vessels.values()
    }

    pub fn observations(&self) -> u64 {
        self.observations
    }

    /// Total volume dispensed from each stock so far.
    pub fn dispensed(&self) -> &BTreeMap<String, Volume> {
        &self.dispensed
    }

    /// Vessels of a given role kind, sorted by index.
    pub fn indexed_vessels(
        &self,
        select: impl Fn(&VesselRole) -> Option<u32>,
    ) -> Vec<(u32, &Vessel)> {
        let mut out: Vec<(u32, &Vessel)> = self
            .vessels
            .values()
            .filter_map(|v| select(&v.role).map(|i| (i, v)))
            .collect();
        out.sort_by_key(|(i, _)| *i);
        out
    }

    /// The stock vessel holding the pure reagent for `colour`.
    pub fn stock_for(&self, colour: ColourClass) -> Option<&Vessel> {
        self.vessels
            .values()
            .find(|v| v.role == VesselRole::Stock(colour))
    }

    /// Moves `volume` from one vessel to another.
    ///
    /// Stocks are bottomless sources and refuse to receive. Between
    /// ordinary vessels the draw takes a proportional share of the source
    /// mixture; the deposit merges into a single sample whose colour is the
    /// volume-weighted mean of everything in the destination.
    pub fn transfer(&mut self, from: &str, to: &str, volume: Volume) -> Result<(), PlatformError> {
        if volume.is_zero() {
            return Err(PlatformError::InvalidVolume {
                text: "0 mL".to_string(),
            });
        }
        if from == to {
            return Err(PlatformError::SameVessel(from.to_string()));
        }
        if !self.has_vessel(from) {
            return Err(PlatformError::UnknownVessel(from.to_string()));
        }
        if !self.has_vessel(to) {
            return Err(PlatformError::UnknownVessel(to.to_string()));
        }
        if self.vessels[to].role.is_stock() {
            return Err(PlatformError::StockDestination(to.to_string()));
        }

        let source = &self.vessels[from];
        let from_stock = source.role.is_stock();
        let draw = if from_stock {
            let template = source.contents.first().ok_or_else(|| {
                PlatformError::InvalidLayout(format!("stock {:?} has no reagent", from))
            })?;
            LiquidSample::new(template.reagent.clone(), volume, template.rgb)
        } else {
            let available = source.total_volume();
            if available < volume {
                return Err(PlatformError::InsufficientVolume {
                    vessel: from.to_string(),
                    requested_ml: volume.as_ml(),
                    available_ml: available.as_ml(),
                });
            }
            let rgb = source.mixed_rgb().unwrap_or([245, 245, 245]);
            LiquidSample::new(merged_reagent(&source.contents), volume, rgb)
        };

        let destination = &self.vessels[to];
        if let Some(cap) = destination.capacity {
            let free = cap.saturating_sub(destination.total_volume());
            if free < volume {
                return Err(PlatformError::CapacityExceeded {
                    vessel: to.to_string(),
                    requested_ml: volume.as_ml(),
                    free_ml: free.as_ml(),
                });
            }
        }

        if from_stock {
            let tally = self.dispensed.entry(from.to_string()).or_insert(Volume::ZERO);
            *tally = tally.checked_add(volume).ok_or(PlatformError::InvalidVolume {
                text: "dispensed volume overflow".to_string(),
            })?;
        } else {
            let source = self.vessels.get_mut(from).unwrap();
            let remaining = source.total_volume().saturating_sub(volume);
            if remaining.is_zero() {
                source.contents.clear();
            } else {
                let rgb = source.mixed_rgb().unwrap_or([245, 245, 245]);
                let reagent = merged_reagent(&source.contents);
                source.contents = vec![LiquidSample::new(reagent, remaining, rgb)];
            }
        }

        let destination = self.vessels.get_mut(to).unwrap();
        destination.contents.push(draw);
        if destination.contents.len() > 1 {
            let volume = destination.total_volume();
            let rgb = destination.mixed_rgb().unwrap_or([245, 245, 245]);
            let reagent = merged_reagent(&destination.contents);
            destination.contents = vec![LiquidSample::new(reagent, volume, rgb)];
        }
        Ok(())
    }

    /// Deposits a fresh sample into a vessel, as an `Add` step does.
    pub fn add_sample(&mut self, to: &str, sample: LiquidSample) -> Result<(), PlatformError> {
        if sample.volume.is_zero() {
            return Err(PlatformError::InvalidVolume {
                text: "0 mL".to_string(),
            });
        }
        let destination = self.vessel_mut(to)?;
        if destination.role.is_stock() {
            return Err(PlatformError::StockDestination(to.to_string()));
        }
        if let Some(cap) = destination.capacity {
            let free = cap.saturating_sub(destination.total_volume());
            if free < sample.volume {
                return Err(PlatformError::CapacityExceeded {
                    vessel: to.to_string(),
                    requested_ml: sample.volume.as_ml(),
                    free_ml: free.as_ml(),
                });
            }
        }
        destination.contents.push(sample);
        if destination.contents.len() > 1 {
            let volume = destination.total_volume();
            let rgb = destination.mixed_rgb().unwrap_or([245, 245, 245]);
            let reagent = merged_reagent(&destination.contents);
            destination.contents = vec![LiquidSample::new(reagent, volume, rgb)];
        }
        Ok(())
    }

    /// Classifies a vessel's colour through the camera.
    ///
    /// Each call consumes one observation slot: the per-observation RNG is
    /// derived from the platform seed and the observation counter, so a
    /// rerun with the same seed sees the identical noise sequence. An empty
    /// vessel reads as white. Noise is skipped entirely when sigma is zero.
    pub fn observe_colour(&mut self, id: &str) -> Result<ColourClass, PlatformError> {
        if !self.has_vessel(id) {
            return Err(PlatformError::UnknownVessel(id.to_string()));
        }
        let counter = self.observations;
        self.observations += 1;
        let vessel = &self.vessels[id];
        let rgb = match vessel.mixed_rgb() {
            None => return Ok(ColourClass::White),
            Some(rgb) => rgb,
        };
        let mut channels = [rgb[0] as f64, rgb[1] as f64, rgb[2] as f64];
        if self.camera_noise_sigma > 0.0 {
            let mut rng = observation_rng(self.rng_seed, counter);
            let normal = Normal::new(0.0, self.camera_noise_sigma).map_err(|_| {
                PlatformError::InvalidConfig(format!(
                    "camera sigma {} is not usable",
                    self.camera_noise_sigma
                ))
            })?;
            for ch in channels.iter_mut() {
                *ch += normal.sample(&mut rng);
            }
        }
        Ok(classify_binned(bin_rgb(channels)))
    }

    /// Noise-free colour of a vessel. Does not touch the observation
    /// counter; used for snapshots and summaries, not by `Measure`.
    pub fn current_colour(&self, id: &str) -> Result<ColourClass, PlatformError> {
        let vessel = self.vessel(id)?;
        Ok(match vessel.mixed_rgb() {
            None => ColourClass::White,
            Some(rgb) => classify_rgb(rgb),
        })
    }

    /// Noise-free view of every vessel.
    pub fn snapshot(&self) -> BTreeMap<String, VesselSnapshot> {
        self.vessels
            .iter()
            .map(|(id, v)| {
                let colour = match v.mixed_rgb() {
                    None => ColourClass::White,
                    Some(rgb) => classify_rgb(rgb),
                };
                (
                    id.clone(),
                    VesselSnapshot {
                        colour,
                        volume_ml: v.total_volume().as_ml(),
                    },
                )
            })
            .collect()
    }

    /// Sum of liquid held outside stock vessels. Conservation means this
    /// equals initial contents plus everything dispensed from stocks.
    pub fn held_volume(&self) -> Volume {
        let ul = self
            .vessels
            .values()
            .filter(|v| !v.role.is_stock())
            .fold(0u64, |acc, v| {
                acc.saturating_add(v.total_volume().as_microlitres())
            });
        Volume(ul)
    }

    pub fn total_dispensed(&self) -> Volume {
        let ul = self
            .dispensed
            .values()
            .fold(0u64, |acc, v| acc.saturating_add(v.as_microlitres()));
        Volume(ul)
    }
}

fn observation_rng(seed: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn merged_reagent(contents: &[LiquidSample]) -> String {
    let mut names = contents.iter().map(|s| s.reagent.as_str());
    match names.next() {
        None => "mixture".to_string(),
        Some(first) => {
            if names.all(|n| n == first) {
                first.to_string()
            } else {
                "mixture".to_string()
            }
        }
    }
}

const VIAL_CAPACITY_ML: f64 = 10.0;
const STOCK_DISPLAY_ML: f64 = 10.0;

fn stock_vessel(colour: ColourClass) -> Vessel {
    let rgb = colour.reference_rgb().expect("stocks hold concrete colours");
    let mut vessel = Vessel::new(
        format!("stock_{}", colour.name()),
        VesselRole::Stock(colour),
        None,
    );
    vessel.contents.push(LiquidSample::new(
        colour.name(),
        Volume::from_ml(STOCK_DISPLAY_ML).unwrap(),
        rgb,
    ));
    vessel
}

/// Builds the standard machine deck: one row of tape vials, a parallel row
/// of head-marker vials, `state_vials` state vials, stocks of the three
/// dyes, and a waste container. Camera noise defaults to zero with seed
/// zero.
pub fn standard_platform(
    tape_len: u32,
    head_len: u32,
    state_vials: u32,
) -> Result<Platform, PlatformError> {
    if tape_len == 0 {
        return Err(PlatformError::InvalidLayout(
            "tape must have at least one vial".to_string(),
        ));
    }
    if tape_len != head_len {
        return Err(PlatformError::InvalidLayout(format!(
            "tape row has {tape_len} vials but head row has {head_len}"
        )));
    }
    if state_vials == 0 {
        return Err(PlatformError::InvalidLayout(
            "at least one state vial is required".to_string(),
        ));
    }
    let mut platform = Platform::new(0.0, 0);
    let vial_capacity = Some(Volume::from_ml(VIAL_CAPACITY_ML)?);
    for i in 1..=tape_len {
        platform.add_vessel(Vessel::new(
            format!("tape_{i}"),
            VesselRole::Tape(i),
            vial_capacity,
        ))?;
    }
    for i in 1..=head_len {
        platform.add_vessel(Vessel::new(
            format!("head_{i}"),
            VesselRole::Head(i),
            vial_capacity,
        ))?;
    }
    for i in 1..=state_vials {
        platform.add_vessel(Vessel::new(
            format!("state_{i}"),
            VesselRole::State(i),
            vial_capacity,
        ))?;
    }
    for colour in [ColourClass::Orange, ColourClass::Blue, ColourClass::Green] {
        platform.add_vessel(stock_vessel(colour))?;
    }
    platform.add_vessel(Vessel::new("waste", VesselRole::Waste, None))?;
    Ok(platform)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlatformConfig {
    #[serde(default)]
    camera: CameraConfig,
    vessels: Vec<VesselConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraConfig {
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    seed: u64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VesselConfig {
    id: String,
    role: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    colour: Option<ColourClass>,
    /// Absent means unbounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity_ml: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    contents: Vec<SampleConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attributes: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleConfig {
    reagent: String,
    volume_ml: f64,
    rgb: [u8; 3],
}

fn role_from_config(cfg: &VesselConfig) -> Result<VesselRole, PlatformError> {
    let indexed = |cfg: &VesselConfig| {
        cfg.index.ok_or_else(|| {
            PlatformError::InvalidConfig(format!(
                "vessel {:?} with role {:?} needs an index",
                cfg.id, cfg.role
            ))
        })
    };
    match cfg.role.as_str() {
        "tape" => Ok(VesselRole::Tape(indexed(cfg)?)),
        "head" => Ok(VesselRole::Head(indexed(cfg)?)),
        "state" => Ok(VesselRole::State(indexed(cfg)?)),
        "stock" => {
            let colour = cfg.colour.ok_or_else(|| {
                PlatformError::InvalidConfig(format!("stock {:?} needs a colour", cfg.id))
            })?;
            if colour == ColourClass::Unknown {
                return Err(PlatformError::InvalidConfig(format!(
                    "stock {:?} cannot hold the unknown class",
                    cfg.id
                )));
            }
            Ok(VesselRole::Stock(colour))
        }
        "waste" => Ok(VesselRole::Waste),
        "reactor" => Ok(VesselRole::Reactor),
        "generic" => Ok(VesselRole::Generic),
        other => Err(PlatformError::InvalidConfig(format!(
            "vessel {:?} has unknown role {:?}",
            cfg.id, other
        ))),
    }
}

/// Loads a platform from its JSON description.
pub fn platform_from_json(text: &str) -> Result<Platform, PlatformError> {
    let config: PlatformConfig = serde_json::from_str(text)
        .map_err(|e| PlatformError::InvalidConfig(e.to_string()))?;
    if !config.camera.sigma.is_finite() || config.camera.sigma < 0.0 {
        return Err(PlatformError::InvalidConfig(format!(
            "camera sigma must be finite and non-negative, got {}",
            config.camera.sigma
        )));
    }
    let mut platform = Platform::new(config.camera.sigma, config.camera.seed);
    let mut waste_count = 0usize;
    let mut seen_roles: Vec<VesselRole> = Vec::new();
    for vessel_cfg in &config.vessels {
        let role = role_from_config(vessel_cfg)?;
        match role {
            VesselRole::Waste => waste_count += 1,
            VesselRole::Tape(_) | VesselRole::Head(_) | VesselRole::State(_)
            | VesselRole::Stock(_) => {
                if seen_roles.contains(&role) {
                    return Err(PlatformError::InvalidConfig(format!(
                        "two vessels share the role of {:?}",
                        vessel_cfg.id
                    )));
                }
                seen_roles.push(role);
            }
            _ => {}
        }
        let capacity = match vessel_cfg.capacity_ml {
            None => None,
            Some(ml) => {
                if !ml.is_finite() || ml <= 0.0 {
                    return Err(PlatformError::InvalidConfig(format!(
                        "vessel {:?} has invalid capacity {ml}",
                        vessel_cfg.id
                    )));
                }
                Some(Volume::from_ml(ml)?)
            }
        };
        let mut vessel = Vessel::new(vessel_cfg.id.clone(), role, capacity);
        if let VesselRole::Stock(colour) = role {
            if vessel_cfg.contents.is_empty() {
                vessel = stock_vessel_with_id(&vessel_cfg.id, colour);
            }
        }
        for sample in &vessel_cfg.contents {
            let volume = Volume::from_ml(sample.volume_ml)?;
            if volume.is_zero() {
                return Err(PlatformError::InvalidConfig(format!(
                    "vessel {:?} lists a sample with no volume",
                    vessel_cfg.id
                )));
            }
            vessel
                .contents
                .push(LiquidSample::new(sample.reagent.clone(), volume, sample.rgb));
        }
        if let Some(cap) = vessel.capacity {
            if vessel.total_volume() > cap {
                return Err(PlatformError::InvalidConfig(format!(
                    "vessel {:?} is filled beyond its capacity",
                    vessel_cfg.id
                )));
            }
        }
        vessel.attributes = vessel_cfg.attributes.clone();
        platform.add_vessel(vessel)?;
    }
    if waste_count != 1 {
        return Err(PlatformError::InvalidConfig(format!(
            "a platform needs exactly one waste vessel, found {waste_count}"
        )));
    }
    Ok(platform)
}

fn stock_vessel_with_id(id: &str, colour: ColourClass) -> Vessel {
    let mut vessel = stock_vessel(colour);
    vessel.id = id.to_string();
    vessel
}

/// Serialises a platform back to its JSON description.
pub fn platform_to_json(platform: &Platform) -> String {
    let vessels = platform
        .vessels()
        .map(|v| {
            let (role, index, colour) = match v.role {
                VesselRole::Tape(i) => ("tape", Some(i), None),
                VesselRole::Head(i) => ("head", Some(i), None),
                VesselRole::State(i) => ("state", Some(i), None),
                VesselRole::Stock(c) => ("stock", None, Some(c)),
                VesselRole::Waste => ("waste", None, None),
                VesselRole::Reactor => ("reactor", None, None),
                VesselRole::Generic => ("generic", None, None),
            };
            VesselConfig {
                id: v.id.clone(),
                role: role.to_string(),
                index,
                colour,
                capacity_ml: v.capacity.map(|c| c.as_ml()),
                contents: v
                    .contents
                    .iter()
                    .map(|s| SampleConfig {
                        reagent: s.reagent.clone(),
                        volume_ml: s.volume.as_ml(),
                        rgb: s.rgb,
                    })
                    .collect(),
                attributes: v.attributes.clone(),
            }
        })
        .collect();
    let config = PlatformConfig {
        camera: CameraConfig {
            sigma: platform.camera_noise_sigma,
            seed: platform.rng_seed,
        },
        vessels,
    };
    let mut text = serde_json::to_string_pretty(&config).expect("config serialises");
    text.push('\n');
    text
}
