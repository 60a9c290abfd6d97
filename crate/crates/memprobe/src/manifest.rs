//! Dataset manifest: `image_id,memorability,category,split`, comma
//! separated, no quoting.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dump::valid_image_id;
use crate::error::{Error, Result};

pub const HEADER: &str = "image_id,memorability,category,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Animal,
    Food,
    Landscape,
    Sports,
    Vehicle,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Animal,
        Category::Food,
        Category::Landscape,
        Category::Sports,
        Category::Vehicle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Animal => "animal",
            Category::Food => "food",
            Category::Landscape => "landscape",
            Category::Sports => "sports",
            Category::Vehicle => "vehicle",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::All => "all",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "all" => Ok(Split::All),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub memorability: f64,
    pub category: Category,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSummary {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    positions: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>) -> std::result::Result<Self, String> {
        let mut positions = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if positions.insert(r.image_id.clone(), i).is_some() {
                return Err(format!("duplicate image_id `{}`", r.image_id));
            }
        }
        Ok(Self { records, positions })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.positions.get(image_id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.image_id.clone()).collect()
    }

    pub fn memorability(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.memorability).collect()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.records.iter().map(|r| r.category).collect()
    }

    /// Keeps records whose id is not in `excluded`, preserving order.
    pub fn without(&self, excluded: &std::collections::HashSet<String>) -> Self {
        let kept = self
            .records
            .iter()
            .filter(|r| !excluded.contains(&r.image_id))
            .cloned()
            .collect();
        Self::new(kept).expect("subset of a valid manifest is valid")
    }

    pub fn summary(&self) -> Option<ScoreSummary> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let mut scores = self.memorability();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        scores.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            scores[n / 2]
        } else {
            (scores[n / 2 - 1] + scores[n / 2]) / 2.0
        };
        Some(ScoreSummary { mean, std, median })
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h.trim_start_matches('\u{feff}') == HEADER => {}
        Some((line, h)) => return Err(Error::parse(path, line, format!("expected header `{HEADER}`, found `{h}`"))),
        None => return Err(Error::parse(path, 1, "empty manifest")),
    }
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(path, line, m);
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let image_id = fields[0];
        if !valid_image_id(image_id) {
            return Err(err(format!("invalid image_id `{image_id}` (allowed: A-Z a-z 0-9 _ -)")));
        }
        if let Some(first) = seen.insert(image_id.to_string(), line) {
            return Err(err(format!("duplicate image_id `{image_id}` (first seen on line {first})")));
        }
        let memorability: f64 = fields[1]
            .parse()
            .map_err(|_| err(format!("memorability `{}` is not a number", fields[1])))?;
        if !(0.0..=1.0).contains(&memorability) {
            return Err(err(format!("memorability {memorability} outside [0, 1]")));
        }
        let category = fields[2].parse().map_err(err)?;
        let split = fields[3].parse().map_err(err)?;
        records.push(ImageRecord {
            image_id: image_id.into(),
            memorability,
            category,
            split,
        });
    }
    Ok(Manifest::new(records).expect("ids checked above"))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.image_id, r.memorability, r.category, r.split.name()));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
