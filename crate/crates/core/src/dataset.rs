//! Flip augmentation and scan-exclusive, class-balanced dataset splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{Augmentation, ProcessedImage, Verdict};

/// Number of augmented variants per base scan.
pub const AUGMENTATION_FACTOR: usize = 4;

/// Reflects an image according to `aug`.
pub fn flip(img: &ProcessedImage, aug: Augmentation) -> ProcessedImage {
    let side = img.side();
    let (h, v) = aug.flips();
    let src = img.pixels();
    let mut out = vec![0u8; src.len()];
    for y in 0..side {
        let sy = if v { side - 1 - y } else { y };
        let src_row = &src[sy * side..(sy + 1) * side];
        let dst_row = &mut out[y * side..(y + 1) * side];
        if h {
            for (d, s) in dst_row.iter_mut().zip(src_row.iter().rev()) {
                *d = *s;
            }
        } else {
            dst_row.copy_from_slice(src_row);
        }
    }
    ProcessedImage::with_side(
        side,
        out,
        img.resize_mode(),
        img.source_scan_id(),
        img.augmentation().compose(aug),
    )
    .expect("flip preserves dimensions")
}

/// Identity plus horizontal, vertical and combined reflections.
pub fn augment(img: &ProcessedImage) -> [ProcessedImage; 4] {
    Augmentation::ALL.map(|aug| flip(img, aug))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub variant: Augmentation,
    pub split: Split,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Selects `val_per_class` and `test_per_class` base scans of each class
/// uniformly at random; everything else goes to training. All four
/// variants of a scan follow it into the same split.
pub fn split(
    corpus: &[(String, Verdict)],
    val_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut by_class: BTreeMap<Verdict, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, verdict) in corpus {
        if !seen.insert(id.as_str()) {
            return Err(Error::Manifest(format!("duplicate scan id {id}")));
        }
        by_class.entry(*verdict).or_default().push(id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: BTreeMap<&str, (Split, Verdict)> = BTreeMap::new();
    for class in [Verdict::Faultless, Verdict::Erroneous] {
        let mut ids = by_class.remove(&class).unwrap_or_default();
        let needed = val_per_class + test_per_class;
        if ids.len() < needed {
            return Err(Error::InsufficientScans {
                class: class.to_string(),
                needed,
                available: ids.len(),
            });
        }
        // order-independent of the input listing
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < val_per_class {
                Split::Validation
            } else if i < needed {
                Split::Test
            } else {
                Split::Train
            };
            assignment.insert(id, (split, class));
        }
    }

    let entries = assignment
        .into_iter()
        .flat_map(|(id, (split, verdict))| {
            Augmentation::ALL.into_iter().map(move |variant| ManifestEntry {
                scan_id: id.to_string(),
                variant,
                split,
                verdict,
            })
        })
        .collect();
    Ok(DatasetManifest { seed, entries })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A base scan lacks some of its four variants, or lists one twice.
    Variants {
        scan_id: String,
        missing: Vec<Augmentation>,
        duplicated: Vec<Augmentation>,
    },
    /// Variants of one base scan are spread over several splits.
    Exclusivity { scan_id: String, splits: Vec<Split> },
    /// Variants of one base scan carry different verdicts.
    Label { scan_id: String },
    /// Validation or test split has unequal class counts.
    Balance {
        split: Split,
        faultless: usize,
        erroneous: usize,
    },
}

impl DatasetManifest {
    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// (faultless, erroneous) counts per split.
    pub fn counts(&self) -> BTreeMap<Split, (usize, usize)> {
        let mut out: BTreeMap<Split, (usize, usize)> = Split::ALL.iter().map(|&s| (s, (0, 0))).collect();
        for e in &self.entries {
            let c = out.get_mut(&e.split).expect("all splits present");
            match e.verdict {
                Verdict::Faultless => c.0 += 1,
                Verdict::Erroneous => c.1 += 1,
            }
        }
        out
    }

    /// Checks every manifest invariant. An empty list means valid.
    pub fn verify(&self) -> Vec<Violation> {
        verify_manifest(self)
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "# seed={}", self.seed)?;
        let mut csv = csv::Writer::from_writer(writer);
        for e in &self.entries {
            csv.serialize(e)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut text = String::new();
        let mut reader = reader;
        reader.read_to_string(&mut text)?;
        let seed = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# seed="))
            .ok_or_else(|| Error::Manifest("missing '# seed=' header line".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Manifest(format!("bad seed: {e}")))?;
        let mut csv = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let entries = csv.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        Ok(Self { seed, entries })
    }
}

pub fn verify_manifest(m: &DatasetManifest) -> Vec<Violation> {
    let mut per_scan: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &m.entries {
        per_scan.entry(&e.scan_id).or_default().push(e);
    }
    let mut violations = Vec::new();
    for (id, entries) in &per_scan {
        let mut seen = BTreeMap::new();
        for e in entries {
            *seen.entry(e.variant).or_insert(0usize) += 1;
        }
        let missing: Vec<_> = Augmentation::ALL.into_iter().filter(|a| !seen.contains_key(a)).collect();
        let duplicated: Vec<_> = seen.iter().filter(|(_, &n)| n > 1).map(|(&a, _)| a).collect();
        if !missing.is_empty() || !duplicated.is_empty() {
            violations.push(Violation::Variants {
                scan_id: id.to_string(),
                missing,
                duplicated,
            });
        }
        let splits: BTreeSet<Split> = entries.iter().map(|e| e.split).collect();
        if splits.len() > 1 {
            violations.push(Violation::Exclusivity {
                scan_id: id.to_string(),
                splits: splits.into_iter().collect(),
            });
        }
        let verdicts: BTreeSet<Verdict> = entries.iter().map(|e| e.verdict).collect();
        if verdicts.len() > 1 {
            violations.push(Violation::Label { scan_id: id.to_string() });
        }
    }
    for (split, (faultless, erroneous)) in m.counts() {
        if split != Split::Train && faultless != erroneous {
            violations.push(Violation::Balance {
                split,
                faultless,
                erroneous,
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::ResizeMode;

    fn image(side: usize) -> ProcessedImage {
        let px = (0..side * side).map(|i| (i * 13 % 251) as u8).collect();
        ProcessedImage::with_side(side, px, ResizeMode::Scale, "a", Augmentation::None).unwrap()
    }

    fn corpus(nf: usize, ne: usize) -> Vec<(String, Verdict)> {
        (0..nf)
            .map(|i| (format!("f{i:04}"), Verdict::Faultless))
            .chain((0..ne).map(|i| (format!("e{i:04}"), Verdict::Erroneous)))
            .collect()
    }

    #[test]
    fn flips_are_commuting_involutions() {
        let x = image(7);
        let h = flip(&x, Augmentation::Hflip);
        let v = flip(&x, Augmentation::Vflip);
        assert_eq!(flip(&h, Augmentation::Hflip).pixels(), x.pixels());
        assert_eq!(flip(&v, Augmentation::Vflip).pixels(), x.pixels());
        assert_eq!(flip(&h, Augmentation::Vflip).pixels(), flip(&v, Augmentation::Hflip).pixels());
        assert_eq!(flip(&h, Augmentation::Vflip).augmentation(), Augmentation::Hvflip);
        assert_eq!(h.get(0, 3), x.get(6, 3));
        assert_eq!(v.get(2, 0), x.get(2, 6));
    }

    #[test]
    fn symmetric_image_hflip_is_identity() {
        let side = 6;
        let px = (0..side * side)
            .map(|i| {
                let (x, y) = (i % side, i / side);
                (x.min(side - 1 - x) * 10 + y) as u8
            })
            .collect();
        let x = ProcessedImage::with_side(side, px, ResizeMode::Shrink, "s", Augmentation::None).unwrap();
        let [id, h, _, _] = augment(&x);
        assert_eq!(id.pixels(), h.pixels());
    }

    #[test]
    fn paper_split_counts() {
        let m = split(&corpus(553, 63), 16, 16, 42).unwrap();
        assert_eq!(m.entries.len(), 2464);
        let c = m.counts();
        assert_eq!(c[&Split::Train], (2084, 124));
        assert_eq!(c[&Split::Validation], (64, 64));
        assert_eq!(c[&Split::Test], (64, 64));
        assert!(m.verify().is_empty());
        // erroneous base scans per split = counts / 4
        assert_eq!((124 / 4, 64 / 4, 64 / 4), (31, 16, 16));
        assert_eq!(31 + 16 + 16, 63);
    }

    #[test]
    fn zero_holdout_puts_everything_in_train() {
        let m = split(&corpus(5, 3), 0, 0, 1).unwrap();
        assert_eq!(m.entries.len(), 32);
        assert!(m.entries.iter().all(|e| e.split == Split::Train));
    }

    #[test]
    fn insufficient_class_is_an_error() {
        let err = split(&corpus(40, 10), 6, 6, 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientScans { needed: 12, available: 10, .. }));
    }

    #[test]
    fn split_is_deterministic_and_order_independent() {
        let c = corpus(50, 20);
        let a = split(&c, 4, 4, 9).unwrap();
        let mut rev = c.clone();
        rev.reverse();
        assert_eq!(a, split(&rev, 4, 4, 9).unwrap());
        assert_ne!(a, split(&c, 4, 4, 10).unwrap());
    }

    #[test]
    fn planted_exclusivity_fault() {
        let mut m = split(&corpus(553, 63), 16, 16, 42).unwrap();
        let idx = m
            .entries
            .iter()
            .position(|e| e.split == Split::Train && e.variant == Augmentation::Hflip)
            .unwrap();
        m.entries[idx].split = Split::Test;
        let v = m.verify();
        let excl = v.iter().filter(|v| matches!(v, Violation::Exclusivity { .. })).count();
        assert_eq!(excl, 1);
    }

    #[test]
    fn planted_balance_fault() {
        let mut m = split(&corpus(553, 63), 16, 16, 42).unwrap();
        // relabel one erroneous test scan (all variants) away from test: drop
        // one erroneous test entry's whole scan from the manifest
        let id = m
            .entries
            .iter()
            .find(|e| e.split == Split::Test && e.verdict == Verdict::Erroneous)
            .unwrap()
            .scan_id
            .clone();
        let first = m.entries.iter().position(|e| e.scan_id == id).unwrap();
        m.entries.remove(first);
        let v = m.verify();
        let balance: Vec<_> = v.iter().filter(|v| matches!(v, Violation::Balance { .. })).collect();
        assert_eq!(balance.len(), 1);
        assert_eq!(
            balance[0],
            &Violation::Balance {
                split: Split::Test,
                faultless: 64,
                erroneous: 63
            }
        );
    }

    #[test]
    fn csv_round_trip() {
        let m = split(&corpus(10, 6), 2, 2, 3).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=3\nscan_id,variant,split,verdict\n"));
        assert_eq!(DatasetManifest::read_csv(&buf[..]).unwrap(), m);
    }
}
