//! Model-internal features computed from per-layer encoder outputs.
//!
//! Four families are produced per image and layer:
//!
//! * activation statistics of the CLS vector (mean, max, max |x|),
//! * the cosine distance between CLS vectors of adjacent layers,
//! * the entropy of the CLS-to-patch attention distribution,
//! * patch uniformity, the mean pairwise cosine similarity of patch tokens.
//!
//! Layer 0 is the embedding output. Activation statistics, entropy and delta
//! cover layers `1..=num_layers`; uniformity covers `0..=num_layers`. The delta
//! at layer `k` compares layer `k - 1` with layer `k`.
//!
//! All inputs are `f32` as stored in activation dumps; accumulation is `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::RangeInclusive;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationStats {
    pub mean: f64,
    pub max: f64,
    pub max_abs: f64,
}

pub fn cls_activation_stats(cls: &[f32]) -> Result<ActivationStats> {
    if cls.is_empty() {
        return Err(Error::Empty("CLS vector"));
    }
    let mut sum = 0.0f64;
    let mut max = f64::NEG_INFINITY;
    let mut max_abs = 0.0f64;
    for &v in cls {
        let v = f64::from(v);
        if !v.is_finite() {
            return Err(Error::NonFinite("CLS vector"));
        }
        sum += v;
        max = max.max(v);
        max_abs = max_abs.max(v.abs());
    }
    Ok(ActivationStats {
        mean: sum / cls.len() as f64,
        max,
        max_abs,
    })
}

/// Cosine distance `1 - cos(prev, curr)`, in `[0, 2]`.
pub fn cls_delta(prev: &[f32], curr: &[f32]) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(Error::LengthMismatch {
            expected: prev.len(),
            actual: curr.len(),
        });
    }
    if prev.is_empty() {
        return Err(Error::Empty("CLS vector"));
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in prev.iter().zip(curr) {
        let (a, b) = (f64::from(a), f64::from(b));
        ab += a * b;
        aa += a * a;
        bb += b * b;
    }
    if !(ab.is_finite() && aa.is_finite() && bb.is_finite()) {
        return Err(Error::NonFinite("CLS vector"));
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm("CLS delta"));
    }
    let cos = (ab / (libm::sqrt(aa) * libm::sqrt(bb))).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Shannon entropy (nats) of a nonnegative attention row after
/// renormalising it to sum to one. `0 ln 0` is taken as 0.
pub fn attention_entropy(row: &[f32]) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::Empty("attention row"));
    }
    let mut total = 0.0f64;
    for (index, &w) in row.iter().enumerate() {
        let w = f64::from(w);
        if !w.is_finite() {
            return Err(Error::NonFinite("attention row"));
        }
        if w < 0.0 {
            return Err(Error::NegativeWeight { index, value: w });
        }
        total += w;
    }
    if total == 0.0 {
        return Err(Error::ZeroAttention);
    }
    let h: f64 = row
        .iter()
        .map(|&w| f64::from(w) / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * libm::log(p))
        .sum();
    // rounding can push H a hair outside [0, ln N]
    Ok(h.clamp(0.0, libm::log(row.len() as f64)))
}

/// Mean over patches of each patch's average cosine similarity to the
/// other patches. `patches` is row-major `n x dim`.
///
/// Uses `(|sum_i p_i / |p_i||^2 - n) / (n (n - 1))`, which is the pairwise
/// definition rearranged, in `O(n d)`.
pub fn patch_uniformity(patches: &[f32], dim: usize) -> Result<f64> {
    if dim == 0 || patches.len() % dim != 0 {
        return Err(Error::LengthMismatch {
            expected: dim.max(1) * (patches.len() / dim.max(1)),
            actual: patches.len(),
        });
    }
    let n = patches.len() / dim;
    if n < 2 {
        return Err(Error::TooFewSamples { min: 2, actual: n });
    }
    let mut sum = vec![0.0f64; dim];
    for p in patches.chunks_exact(dim) {
        let sq: f64 = p.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        if !sq.is_finite() {
            return Err(Error::NonFinite("patch tokens"));
        }
        if sq == 0.0 {
            return Err(Error::ZeroNorm("patch uniformity"));
        }
        let inv = 1.0 / libm::sqrt(sq);
        for (s, &v) in sum.iter_mut().zip(p) {
            *s += f64::from(v) * inv;
        }
    }
    let sq_norm: f64 = sum.iter().map(|s| s * s).sum();
    let n = n as f64;
    Ok(((sq_norm - n) / (n * (n - 1.0))).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    ActMean,
    ActMax,
    ActMaxAbs,
    ClsDelta,
    AttnEntropy,
    PatchUniformity,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::ActMean,
        Feature::ActMax,
        Feature::ActMaxAbs,
        Feature::ClsDelta,
        Feature::AttnEntropy,
        Feature::PatchUniformity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::ActMean => "act_mean",
            Feature::ActMax => "act_max",
            Feature::ActMaxAbs => "act_maxabs",
            Feature::ClsDelta => "cls_delta",
            Feature::AttnEntropy => "attn_entropy",
            Feature::PatchUniformity => "patch_uniformity",
        }
    }

    /// Layers this feature is defined on for an encoder with `num_layers`
    /// transformer blocks.
    pub fn layers(self, num_layers: usize) -> RangeInclusive<usize> {
        match self {
            Feature::PatchUniformity => 0..=num_layers,
            _ => 1..=num_layers,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown feature `{s}`")))
    }
}

/// One column of a [`FeatureTable`]: a feature evaluated at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Column {
    pub feature: Feature,
    pub layer: usize,
}

impl Column {
    pub fn new(feature: Feature, layer: usize) -> Self {
        Self { feature, layer }
    }
}

/// Rendered as `<feature>@L<layer>`, the column header used in exports.
impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@L{}", self.feature, self.layer)
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad column header `{s}`"));
        let (feature, layer) = s.split_once("@L").ok_or_else(bad)?;
        Ok(Column {
            feature: feature.parse()?,
            layer: layer.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorKind {
    Cls,
    Patches,
    AttnCls,
}

impl TensorKind {
    pub fn name(self) -> &'static str {
        match self {
            TensorKind::Cls => "cls",
            TensorKind::Patches => "patches",
            TensorKind::AttnCls => "attn_cls",
        }
    }
}

impl fmt::Display for TensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Anything that can hand out per-image, per-layer tensors.
///
/// `Cls` is `[hidden_dim]`, `Patches` is row-major `[num_patches, hidden_dim]`
/// and `AttnCls` is the head-averaged CLS-query row over patch tokens.
/// Return `Ok(None)` for a tensor that does not exist.
pub trait TensorSource {
    type Error: From<Error>;

    fn tensor(
        &self,
        image_id: &str,
        layer: usize,
        kind: TensorKind,
    ) -> core::result::Result<Option<Vec<f32>>, Self::Error>;
}

/// Which columns to build.
#[derive(Debug, Clone)]
pub struct FeatureSpec {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub features: Vec<Feature>,
    /// Optional inclusive layer filter applied on top of each feature's
    /// natural range.
    pub layer_filter: Option<RangeInclusive<usize>>,
}

impl FeatureSpec {
    pub fn all(num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            num_layers,
            hidden_dim,
            features: Feature::ALL.to_vec(),
            layer_filter: None,
        }
    }

    pub fn with_layers(mut self, layers: RangeInclusive<usize>) -> Self {
        self.layer_filter = Some(layers);
        self
    }

    /// Column layout: grouped by feature in the order of `features`, layers
    /// ascending within each group.
    pub fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::new();
        for &feature in &self.features {
            for layer in feature.layers(self.num_layers) {
                if self.layer_filter.as_ref().map_or(true, |r| r.contains(&layer)) {
                    cols.push(Column::new(feature, layer));
                }
            }
        }
        cols
    }
}

/// Image x (feature, layer) matrix of scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    image_ids: Vec<String>,
    columns: Vec<Column>,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(image_ids: Vec<String>, columns: Vec<Column>, values: Vec<f64>) -> Result<Self> {
        let expected = image_ids.len() * columns.len();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature table"));
        }
        Ok(Self {
            image_ids,
            columns,
            values,
        })
    }

    /// Assembles a table from rows produced by [`feature_row`], keeping the
    /// order of `image_ids`.
    pub fn from_rows(image_ids: Vec<String>, columns: Vec<Column>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut values = Vec::with_capacity(image_ids.len() * columns.len());
        if rows.len() != image_ids.len() {
            return Err(Error::LengthMismatch {
                expected: image_ids.len(),
                actual: rows.len(),
            });
        }
        for row in rows {
            if row.len() != columns.len() {
                return Err(Error::LengthMismatch {
                    expected: columns.len(),
                    actual: row.len(),
                });
            }
            values.extend(row);
        }
        Self::new(image_ids, columns, values)
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn num_rows(&self) -> usize {
        self.image_ids.len()
    }

    pub fn num_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.columns.len();
        &self.values[r * w..(r + 1) * w]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.columns.len() + c]
    }

    pub fn column_index(&self, column: Column) -> Option<usize> {
        self.columns.iter().position(|&c| c == column)
    }

    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.num_rows()).map(|r| self.get(r, c)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let w = self.columns.len();
        let mut values = Vec::with_capacity(rows.len() * w);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            ids.push(self.image_ids[r].clone());
            values.extend_from_slice(self.row(r));
        }
        Self {
            image_ids: ids,
            columns: self.columns.clone(),
            values,
        }
    }
}

fn fetch<S: TensorSource>(
    source: &S,
    image_id: &str,
    layer: usize,
    kind: TensorKind,
) -> core::result::Result<Vec<f32>, S::Error> {
    source.tensor(image_id, layer, kind)?.ok_or_else(|| {
        Error::MissingTensor {
            image: image_id.into(),
            layer,
            kind,
        }
        .into()
    })
}

/// Computes one image's row for the given column layout.
pub fn feature_row<S: TensorSource>(
    source: &S,
    image_id: &str,
    hidden_dim: usize,
    columns: &[Column],
) -> core::result::Result<Vec<f64>, S::Error> {
    // the CLS vectors are shared between activation stats and deltas
    let mut cls_cache: Vec<(usize, Vec<f32>)> = Vec::new();
    let mut cls = |layer: usize| -> core::result::Result<Vec<f32>, S::Error> {
        if let Some((_, v)) = cls_cache.iter().find(|(l, _)| *l == layer) {
            return Ok(v.clone());
        }
        let v = fetch(source, image_id, layer, TensorKind::Cls)?;
        if v.len() != hidden_dim {
            return Err(Error::LengthMismatch {
                expected: hidden_dim,
                actual: v.len(),
            }
            .into());
        }
        cls_cache.push((layer, v.clone()));
        Ok(v)
    };

    let mut row = Vec::with_capacity(columns.len());
    for col in columns {
        let value = match col.feature {
            Feature::ActMean => cls_activation_stats(&cls(col.layer)?)?.mean,
            Feature::ActMax => cls_activation_stats(&cls(col.layer)?)?.max,
            Feature::ActMaxAbs => cls_activation_stats(&cls(col.layer)?)?.max_abs,
            Feature::ClsDelta => {
                if col.layer == 0 {
                    return Err(Error::InvalidConfig("cls_delta is undefined at layer 0".into()).into());
                }
                cls_delta(&cls(col.layer - 1)?, &cls(col.layer)?)?
            }
            Feature::AttnEntropy => {
                attention_entropy(&fetch(source, image_id, col.layer, TensorKind::AttnCls)?)?
            }
            Feature::PatchUniformity => {
                patch_uniformity(&fetch(source, image_id, col.layer, TensorKind::Patches)?, hidden_dim)?
            }
        };
        row.push(value);
    }
    Ok(row)
}

/// Serial reference construction of a feature table, rows in `image_ids`
/// order.
pub fn build_feature_table<S: TensorSource>(
    source: &S,
    image_ids: &[String],
    spec: &FeatureSpec,
) -> core::result::Result<FeatureTable, S::Error> {
    let columns = spec.columns();
    let rows = image_ids
        .iter()
        .map(|id| feature_row(source, id, spec.hidden_dim, &columns))
        .collect::<core::result::Result<Vec<_>, _>>()?;
    Ok(FeatureTable::from_rows(image_ids.to_vec(), columns, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;

    const LN2: f64 = core::f64::consts::LN_2;

    #[test]
    fn activation_stats_by_hand() {
        let s = cls_activation_stats(&[1.0, -3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.max, s.max_abs), (0.0, 2.0, 3.0));
        let z = cls_activation_stats(&[0.0; 5]).unwrap();
        assert_eq!((z.mean, z.max, z.max_abs), (0.0, 0.0, 0.0));
        assert_eq!(cls_activation_stats(&[]), Err(Error::Empty("CLS vector")));
        assert_eq!(
            cls_activation_stats(&[1.0, f32::NAN]),
            Err(Error::NonFinite("CLS vector"))
        );
    }

    #[test]
    fn activation_stats_all_negative() {
        let s = cls_activation_stats(&[-1.0, -0.5, -4.0]).unwrap();
        assert_eq!(s.max, -0.5);
        assert_eq!(s.max_abs, 4.0);
    }

    #[test]
    fn delta_cases() {
        let v = [0.3f32, -1.2, 4.0];
        assert!(cls_delta(&v, &v).unwrap().abs() < 1e-15);
        let neg = v.map(|x| -x);
        assert!((cls_delta(&v, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!((cls_delta(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cls_delta(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm("CLS delta")));
        assert!(matches!(
            cls_delta(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn entropy_cases() {
        let n = 49;
        let uniform = vec![0.3f32; n];
        assert!((attention_entropy(&uniform).unwrap() - libm::log(n as f64)).abs() < 1e-12);
        let mut one_hot = vec![0.0f32; n];
        one_hot[7] = 0.9;
        assert_eq!(attention_entropy(&one_hot).unwrap(), 0.0);
        let h = attention_entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.5 * LN2).abs() < 1e-12);
        assert!((h - 1.0397).abs() < 1e-4);
        assert_eq!(attention_entropy(&[0.0, 0.0]), Err(Error::ZeroAttention));
        assert!(matches!(
            attention_entropy(&[0.5, -0.1]),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn uniformity_cases() {
        let v = [1.0f32, 2.0, -0.5];
        let copies: Vec<f32> = v.iter().copied().cycle().take(3 * 5).collect();
        assert!((patch_uniformity(&copies, 3).unwrap() - 1.0).abs() < 1e-12);
        // rows of the 4x4 identity
        let mut eye = vec![0.0f32; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        assert!(patch_uniformity(&eye, 4).unwrap().abs() < 1e-12);
        assert_eq!(
            patch_uniformity(&[1.0, 2.0], 2),
            Err(Error::TooFewSamples { min: 2, actual: 1 })
        );
        assert_eq!(
            patch_uniformity(&[1.0, 2.0, 0.0, 0.0], 2),
            Err(Error::ZeroNorm("patch uniformity"))
        );
        // antipodal pair
        assert!((patch_uniformity(&[1.0, 0.0, -1.0, 0.0], 2).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn column_header_round_trip() {
        for f in Feature::ALL {
            let c = Column::new(f, 11);
            assert_eq!(c.to_string().parse::<Column>().unwrap(), c);
        }
        assert!("act_mean@3".parse::<Column>().is_err());
        assert!("bogus@L3".parse::<Column>().is_err());
    }

    #[test]
    fn column_accounting_for_twelve_layers() {
        let spec = FeatureSpec::all(12, 768);
        assert_eq!(spec.columns().len(), 3 * 12 + 12 + 12 + 13);
        let restricted = FeatureSpec::all(12, 768).with_layers(1..=6);
        assert_eq!(restricted.columns().len(), 6 * 6);
        let with_zero = FeatureSpec::all(12, 768).with_layers(0..=2);
        assert_eq!(with_zero.columns().len(), 5 * 2 + 3);
    }

    struct MapSource(BTreeMap<(String, usize, &'static str), Vec<f32>>);

    impl TensorSource for MapSource {
        type Error = Error;
        fn tensor(&self, id: &str, layer: usize, kind: TensorKind) -> Result<Option<Vec<f32>>> {
            Ok(self.0.get(&(id.into(), layer, kind.name())).cloned())
        }
    }

    fn source(ids: &[&str], layers: usize, dim: usize, patches: usize) -> MapSource {
        let mut m = BTreeMap::new();
        let mut state = 17u32;
        let mut next = move || {
            state = state.wrapping_mul(1_103_515_245).wrapping_add(12345);
            ((state >> 8) as f32 / (1u32 << 24) as f32) + 0.05
        };
        for id in ids {
            for l in 0..=layers {
                m.insert((String::from(*id), l, "cls"), (0..dim).map(|_| next() - 0.5).collect());
                m.insert((String::from(*id), l, "patches"), (0..dim * patches).map(|_| next()).collect());
                if l > 0 {
                    m.insert((String::from(*id), l, "attn_cls"), (0..patches).map(|_| next()).collect());
                }
            }
        }
        MapSource(m)
    }

    #[test]
    fn table_shape_and_missing_tensor() {
        let src = source(&["a", "b", "c"], 12, 4, 5);
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| String::from(*s)).collect();
        let t = build_feature_table(&src, &ids, &FeatureSpec::all(12, 4)).unwrap();
        assert_eq!((t.num_rows(), t.num_cols()), (3, 3 * 12 + 12 + 12 + 13));

        let mut broken = src;
        broken.0.remove(&(String::from("b"), 5, "patches"));
        let err = build_feature_table(&broken, &ids, &FeatureSpec::all(12, 4)).unwrap_err();
        assert_eq!(
            err,
            Error::MissingTensor {
                image: "b".into(),
                layer: 5,
                kind: TensorKind::Patches
            }
        );
        assert!(err.to_string().contains("`b` layer 5"));
    }

    #[test]
    fn permuted_ids_permute_rows() {
        let src = source(&["a", "b", "c"], 3, 4, 5);
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| String::from(*s)).collect();
        let perm: Vec<String> = ["c", "a", "b"].iter().map(|s| String::from(*s)).collect();
        let spec = FeatureSpec::all(3, 4);
        let t = build_feature_table(&src, &ids, &spec).unwrap();
        let p = build_feature_table(&src, &perm, &spec).unwrap();
        assert_eq!(p.row(0), t.row(2));
        assert_eq!(p.row(1), t.row(0));
        assert_eq!(p.row(2), t.row(1));
        assert_eq!(t.select_rows(&[2, 0, 1]), p);
    }
}
