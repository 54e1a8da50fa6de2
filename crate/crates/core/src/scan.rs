//! Domain types shared by every stage: raw 16-bit scans, network-ready
//! images, verdicts and expert committee records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square network input.
pub const INPUT_SIDE: usize = 299;

/// Row-major grid of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero-area grid {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "grid {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanSource {
    Synthetic,
    Ingested,
}

/// One 16-bit grayscale intensity scan of a seam.
///
/// Construction guarantees a non-empty grid with at least one non-zero
/// pixel, so max-normalization is always defined.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScan {
    id: String,
    width: usize,
    height: usize,
    pixels: Vec<u16>,
    seam_type: String,
    source: ScanSource,
}

impl RawScan {
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        pixels: Vec<u16>,
        seam_type: impl Into<String>,
        source: ScanSource,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidScan(format!("zero-area scan {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidScan(format!(
                "{width}x{height} scan needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().all(|&p| p == 0) {
            return Err(Error::AllZeroScan);
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            pixels,
            seam_type: seam_type.into(),
            source,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }
    pub fn seam_type(&self) -> &str {
        &self.seam_type
    }
    pub fn source(&self) -> ScanSource {
        self.source
    }

    pub fn max_value(&self) -> u16 {
        self.pixels.iter().copied().max().unwrap_or(0)
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Direct resize to the square input, ignoring aspect ratio.
    Shrink,
    /// Aspect-preserving resize, centered on a padded square canvas.
    Scale,
}

impl ResizeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResizeMode::Shrink => "shrink",
            ResizeMode::Scale => "scale",
        }
    }
}

impl fmt::Display for ResizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shrink" => Ok(ResizeMode::Shrink),
            "scale" => Ok(ResizeMode::Scale),
            other => Err(Error::InvalidConfig(format!("unknown resize mode {other:?}"))),
        }
    }
}

/// Reflection variant of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    Hflip,
    Vflip,
    Hvflip,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::None,
        Augmentation::Hflip,
        Augmentation::Vflip,
        Augmentation::Hvflip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Hflip => "hflip",
            Augmentation::Vflip => "vflip",
            Augmentation::Hvflip => "hvflip",
        }
    }

    pub fn flips(self) -> (bool, bool) {
        match self {
            Augmentation::None => (false, false),
            Augmentation::Hflip => (true, false),
            Augmentation::Vflip => (false, true),
            Augmentation::Hvflip => (true, true),
        }
    }

    /// Variant obtained by applying `other` on top of `self`.
    pub fn compose(self, other: Augmentation) -> Augmentation {
        let (h1, v1) = self.flips();
        let (h2, v2) = other.flips();
        match (h1 ^ h2, v1 ^ v2) {
            (false, false) => Augmentation::None,
            (true, false) => Augmentation::Hflip,
            (false, true) => Augmentation::Vflip,
            (true, true) => Augmentation::Hvflip,
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Augmentation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown augmentation {s:?}")))
    }
}

/// A square 8-bit network-ready image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedImage {
    side: usize,
    pixels: Vec<u8>,
    resize_mode: ResizeMode,
    source_scan_id: String,
    augmentation: Augmentation,
}

impl ProcessedImage {
    /// Builds a `INPUT_SIDE`×`INPUT_SIDE` image.
    pub fn new(
        pixels: Vec<u8>,
        resize_mode: ResizeMode,
        source_scan_id: impl Into<String>,
        augmentation: Augmentation,
    ) -> Result<Self> {
        Self::with_side(INPUT_SIDE, pixels, resize_mode, source_scan_id, augmentation)
    }

    /// Builds an image with a non-standard side length. Only for explicit
    /// target overrides (small test models); the service always uses
    /// [`INPUT_SIDE`].
    pub fn with_side(
        side: usize,
        pixels: Vec<u8>,
        resize_mode: ResizeMode,
        source_scan_id: impl Into<String>,
        augmentation: Augmentation,
    ) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::InvalidImage(format!(
                "{side}x{side} image needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        Ok(Self {
            side,
            pixels,
            resize_mode,
            source_scan_id: source_scan_id.into(),
            augmentation,
        })
    }

    pub fn width(&self) -> usize {
        self.side
    }
    pub fn height(&self) -> usize {
        self.side
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
    pub fn resize_mode(&self) -> ResizeMode {
        self.resize_mode
    }
    pub fn source_scan_id(&self) -> &str {
        &self.source_scan_id
    }
    pub fn augmentation(&self) -> Augmentation {
        self.augmentation
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.side + x]
    }

    pub fn to_grid(&self) -> Grid<u8> {
        Grid {
            width: self.side,
            height: self.side,
            data: self.pixels.clone(),
        }
    }
}

/// Whole-seam verdict. `Erroneous` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Faultless,
    Erroneous,
}

impl Verdict {
    pub fn is_positive(self) -> bool {
        self == Verdict::Erroneous
    }

    /// Class index used by the classifier output layer.
    pub fn class_index(self) -> usize {
        match self {
            Verdict::Faultless => 0,
            Verdict::Erroneous => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Faultless => "Faultless",
            Verdict::Erroneous => "Erroneous",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Faultless" => Ok(Verdict::Faultless),
            "Erroneous" => Ok(Verdict::Erroneous),
            other => Err(Error::UnknownVerdict(other.to_string())),
        }
    }
}

/// Quorum and majority settings for committee consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusRule {
    pub quorum: usize,
}

impl Default for ConsensusRule {
    fn default() -> Self {
        Self { quorum: 5 }
    }
}

impl ConsensusRule {
    pub fn new(quorum: usize) -> Result<Self> {
        if quorum == 0 {
            return Err(Error::InvalidConfig("quorum must be at least 1".into()));
        }
        Ok(Self { quorum })
    }

    /// Strict majority of the quorum: 3 of 5, 1 of 1, 2 of 2.
    pub fn majority(&self) -> usize {
        self.quorum / 2 + 1
    }

    /// Consensus for a vote multiset, or `None` while below quorum or
    /// without a strict majority.
    pub fn decide<'a>(&self, votes: impl IntoIterator<Item = &'a Verdict>) -> Option<Verdict> {
        let (mut faultless, mut erroneous) = (0usize, 0usize);
        for v in votes {
            match v {
                Verdict::Faultless => faultless += 1,
                Verdict::Erroneous => erroneous += 1,
            }
        }
        if faultless + erroneous < self.quorum {
            return None;
        }
        let need = self.majority();
        if erroneous >= need && erroneous > faultless {
            Some(Verdict::Erroneous)
        } else if faultless >= need && faultless > erroneous {
            Some(Verdict::Faultless)
        } else {
            None
        }
    }
}

/// Per-scan expert votes and the derived consensus label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeRecord {
    pub scan_id: String,
    pub votes: BTreeMap<String, Verdict>,
    pub consensus: Option<Verdict>,
}

impl CommitteeRecord {
    pub fn new(scan_id: impl Into<String>) -> Self {
        Self {
            scan_id: scan_id.into(),
            votes: BTreeMap::new(),
            consensus: None,
        }
    }

    /// Records (or replaces) an expert's vote and recomputes consensus.
    /// Returns the vote it replaced, if any.
    pub fn cast_vote(
        &mut self,
        expert_id: impl Into<String>,
        verdict: Verdict,
        rule: &ConsensusRule,
    ) -> Option<Verdict> {
        let previous = self.votes.insert(expert_id.into(), verdict);
        self.consensus = rule.decide(self.votes.values());
        previous
    }

    pub fn tally(&self) -> (usize, usize) {
        let erroneous = self.votes.values().filter(|v| v.is_positive()).count();
        (self.votes.len() - erroneous, erroneous)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_scan_rejects_zero_area_and_all_zero() {
        assert!(matches!(
            RawScan::new("a", 0, 3, vec![], "t", ScanSource::Ingested),
            Err(Error::InvalidScan(_))
        ));
        assert!(matches!(
            RawScan::new("a", 2, 2, vec![0; 4], "t", ScanSource::Ingested),
            Err(Error::AllZeroScan)
        ));
        assert!(matches!(
            RawScan::new("a", 2, 2, vec![1; 3], "t", ScanSource::Ingested),
            Err(Error::InvalidScan(_))
        ));
        let s = RawScan::new("a", 2, 1, vec![0, 7], "t", ScanSource::Ingested).unwrap();
        assert_eq!(s.max_value(), 7);
    }

    #[test]
    fn verdict_alphabet_is_closed() {
        assert_eq!("Faultless".parse::<Verdict>().unwrap(), Verdict::Faultless);
        assert_eq!("Erroneous".parse::<Verdict>().unwrap(), Verdict::Erroneous);
        assert!("erroneous".parse::<Verdict>().is_err());
        assert!("Unknown".parse::<Verdict>().is_err());
        assert_eq!(serde_json::to_string(&Verdict::Erroneous).unwrap(), "\"Erroneous\"");
        assert!(serde_json::from_str::<Verdict>("\"Maybe\"").is_err());
    }

    #[test]
    fn strict_majority_of_five() {
        let rule = ConsensusRule::default();
        let mut rec = CommitteeRecord::new("s");
        let votes = [
            Verdict::Erroneous,
            Verdict::Erroneous,
            Verdict::Erroneous,
            Verdict::Faultless,
        ];
        for (i, v) in votes.iter().enumerate() {
            rec.cast_vote(format!("e{i}"), *v, &rule);
        }
        assert_eq!(rec.consensus, None, "four votes are below quorum");
        rec.cast_vote("e4", Verdict::Faultless, &rule);
        assert_eq!(rec.consensus, Some(Verdict::Erroneous));
    }

    #[test]
    fn replacement_keeps_one_vote_per_expert() {
        let rule = ConsensusRule::default();
        let mut rec = CommitteeRecord::new("s");
        rec.cast_vote("e1", Verdict::Erroneous, &rule);
        rec.cast_vote("e2", Verdict::Erroneous, &rule);
        rec.cast_vote("e3", Verdict::Faultless, &rule);
        rec.cast_vote("e4", Verdict::Faultless, &rule);
        let prev = rec.cast_vote("e2", Verdict::Faultless, &rule);
        assert_eq!(prev, Some(Verdict::Erroneous));
        assert_eq!(rec.tally(), (3, 1));
        assert_eq!(rec.consensus, None);
    }

    #[test]
    fn augmentation_composition() {
        use Augmentation::*;
        assert_eq!(Hflip.compose(Hflip), None);
        assert_eq!(Hflip.compose(Vflip), Hvflip);
        assert_eq!(Vflip.compose(Hflip), Hvflip);
        assert_eq!(Hvflip.compose(Vflip), Hflip);
    }
}
