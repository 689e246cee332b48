//! Extreme Value Machine: per-point Weibull radial inclusion functions with an
//! open-set rejection threshold.
//!
//! Every training point keeps the sorted `tailsize` smallest (scaled) distances
//! to points of other classes. Keeping the tail makes [`EvmModel::update`]
//! produce exactly the fits a from-scratch [`EvmModel::fit`] would.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, Standardizer, FEATURE_DIM};
use crate::labels::EventClass;
use crate::weibull::{self, DEGENERATE_SHAPE};

/// Format tag written into serialized models.
pub const MODEL_FORMAT: &str = "flexid-evm";
pub const MODEL_VERSION: u32 = 1;

/// Scale used when every negative distance of a point is zero.
const ZERO_TAIL_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Canberra,
    Euclidean,
    Cosine,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                found: b.len(),
            });
        }
        Ok(match self {
            Distance::Canberra => canberra(a, b),
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Distance::Cosine => cosine(a, b),
        })
    }
}

fn canberra(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let den = x.abs() + y.abs();
            if den == 0.0 {
                0.0
            } else {
                (x - y).abs() / den
            }
        })
        .sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).max(0.0)
        }
    }
}

/// Canberra distance between two feature vectors.
pub fn canberra_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Distance::Canberra.eval(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvmParams {
    pub tailsize: usize,
    pub distance_multiplier: f64,
    pub distance: Distance,
    /// Open-set rejection threshold.
    pub rho: f64,
}

impl Default for EvmParams {
    fn default() -> Self {
        Self {
            tailsize: 7,
            distance_multiplier: 0.9,
            distance: Distance::Canberra,
            rho: 0.9,
        }
    }
}

impl EvmParams {
    pub fn validate(&self) -> Result<()> {
        if self.tailsize == 0 {
            return Err(Error::InvalidParameter("tailsize must be positive".into()));
        }
        if !(self.distance_multiplier > 0.0 && self.distance_multiplier.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "distance_multiplier must be positive, got {}",
                self.distance_multiplier
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Open,
    Closed,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "open" => Ok(Mode::Open),
            "closed" => Ok(Mode::Closed),
            other => Err(Error::Config(format!("unknown mode {other:?} (open|closed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeVector {
    pub center: Vec<f64>,
    pub shape: f64,
    pub scale: f64,
    /// Ascending scaled distances to the nearest points of other classes.
    pub tail: Vec<f64>,
}

impl ExtremeVector {
    /// Inclusion probability `exp(-(d / scale)^shape)`.
    pub fn psi(&self, d: f64) -> f64 {
        weibull::survival(d, self.shape, self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVectors {
    pub label: EventClass,
    pub vectors: Vec<ExtremeVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub class: EventClass,
    pub probability: f64,
    /// Index (within the class) of the vector attaining the maximum.
    pub vector: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `None` means unknown.
    pub label: Option<EventClass>,
    pub probability: f64,
    /// One entry per known class, ordered by class id.
    pub per_class: Vec<ClassProbability>,
}

impl Prediction {
    pub fn is_unknown(&self) -> bool {
        self.label.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvmModel {
    pub format: String,
    pub version: u32,
    pub params: EvmParams,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
    /// Ordered by class id.
    pub classes: Vec<ClassVectors>,
}

/// A training point in model space.
pub type Labeled = (Vec<f64>, EventClass);

impl EvmModel {
    pub fn fit(train: &[Labeled], params: EvmParams) -> Result<Self> {
        params.validate()?;
        let dim = check_dims(train, None)?;
        let grouped = group(train);
        if grouped.len() < 2 {
            return Err(Error::NeedTwoClasses);
        }
        let mut classes = Vec::with_capacity(grouped.len());
        let mut offset = 0;
        for (&label, points) in &grouped {
            let mut vectors = Vec::with_capacity(points.len());
            for (i, center) in points.iter().enumerate() {
                let mut dists = Vec::new();
                for (&other, negs) in &grouped {
                    if other != label {
                        for n in negs {
                            dists.push(params.distance.eval(center, n)? * params.distance_multiplier);
                        }
                    }
                }
                let tail = smallest(dists, params.tailsize);
                let (shape, scale) = fit_tail(&tail, offset + i)?;
                vectors.push(ExtremeVector {
                    center: center.to_vec(),
                    shape,
                    scale,
                    tail,
                });
            }
            offset += points.len();
            classes.push(ClassVectors { label, vectors });
        }
        Ok(Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            params,
            dim,
            standardizer: None,
            classes,
        })
    }

    /// Standardizes raw feature vectors, fits the model on them and keeps the standardizer.
    pub fn fit_features(train: &[FeatureVector], params: EvmParams) -> Result<Self> {
        let standardizer = Standardizer::fit_vectors(train)?;
        let points = labeled_points(train, &standardizer)?;
        let mut model = Self::fit(&points, params)?;
        model.standardizer = Some(standardizer);
        Ok(model)
    }

    /// Adds points (in model space). Existing vectors whose tails change are
    /// refitted; the result matches a fit on the union of the training sets.
    pub fn update(&self, new: &[Labeled]) -> Result<Self> {
        if new.is_empty() {
            return Ok(self.clone());
        }
        check_dims(new, Some(self.dim))?;
        let p = self.params;
        let mut out = self.clone();
        let mut point_id = 0;
        for cls in &mut out.classes {
            for v in &mut cls.vectors {
                let extra: Vec<f64> = new
                    .iter()
                    .filter(|(_, l)| *l != cls.label)
                    .map(|(x, _)| Ok(p.distance.eval(&v.center, x)? * p.distance_multiplier))
                    .collect::<Result<_>>()?;
                if !extra.is_empty() {
                    let mut all = v.tail.clone();
                    all.extend(extra);
                    let tail = smallest(all, p.tailsize);
                    if tail != v.tail {
                        (v.shape, v.scale) = fit_tail(&tail, point_id)?;
                        v.tail = tail;
                    }
                }
                point_id += 1;
            }
        }

        let added = group(new);
        for (&label, points) in &added {
            let idx = match out.classes.binary_search_by_key(&label.id(), |c| c.label.id()) {
                Ok(i) => i,
                Err(i) => {
                    out.classes.insert(i, ClassVectors { label, vectors: Vec::new() });
                    i
                }
            };
            for center in points {
                let mut dists = Vec::new();
                for cls in &self.classes {
                    if cls.label != label {
                        for v in &cls.vectors {
                            dists.push(p.distance.eval(center, &v.center)? * p.distance_multiplier);
                        }
                    }
                }
                for (&other, negs) in &added {
                    if other != label {
                        for n in negs {
                            dists.push(p.distance.eval(center, n)? * p.distance_multiplier);
                        }
                    }
                }
                if dists.is_empty() {
                    return Err(Error::NeedTwoClasses);
                }
                let tail = smallest(dists, p.tailsize);
                let (shape, scale) = fit_tail(&tail, point_id)?;
                point_id += 1;
                out.classes[idx].vectors.push(ExtremeVector {
                    center: center.to_vec(),
                    shape,
                    scale,
                    tail,
                });
            }
        }
        if out.classes.len() < 2 {
            return Err(Error::NeedTwoClasses);
        }
        Ok(out)
    }

    /// Greedy set cover per class: keeps vectors until every training point of
    /// the class has inclusion probability at least `coverage` under a kept one.
    pub fn reduce(&self, coverage: f64) -> Result<Self> {
        if !(coverage > 0.0 && coverage < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "coverage must lie in (0, 1), got {coverage}"
            )));
        }
        let mut out = self.clone();
        for cls in &mut out.classes {
            let vs = &cls.vectors;
            let n = vs.len();
            let mut covers = vec![vec![false; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let d = self.params.distance.eval(&vs[i].center, &vs[j].center)?;
                    covers[i][j] = i == j || vs[i].psi(d) >= coverage;
                }
            }
            let mut covered = vec![false; n];
            let mut keep = vec![false; n];
            while covered.iter().any(|c| !c) {
                let gain = |i: usize| (0..n).filter(|&j| covers[i][j] && !covered[j]).count();
                // max_by_key returns the last maximum, so scan in reverse for the lowest id
                let best = (0..n).rev().max_by_key(|&i| gain(i)).expect("non-empty class");
                keep[best] = true;
                for j in 0..n {
                    covered[j] |= covers[best][j];
                }
            }
            let mut k = keep.iter();
            cls.vectors.retain(|_| *k.next().unwrap());
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64], mode: Mode) -> Result<Prediction> {
        if self.classes.is_empty() {
            return Err(Error::Model("model has no classes".into()));
        }
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut per_class = Vec::with_capacity(self.classes.len());
        for cls in &self.classes {
            let mut best = ClassProbability {
                class: cls.label,
                probability: f64::NEG_INFINITY,
                vector: 0,
            };
            for (i, v) in cls.vectors.iter().enumerate() {
                let prob = v.psi(self.params.distance.eval(&v.center, x)?);
                if prob > best.probability {
                    best.probability = prob;
                    best.vector = i;
                }
            }
            per_class.push(best);
        }
        let mut winner = &per_class[0];
        for c in &per_class[1..] {
            if c.probability > winner.probability {
                winner = c;
            }
        }
        let probability = winner.probability;
        let label = match mode {
            Mode::Closed => Some(winner.class),
            Mode::Open if probability >= self.params.rho => Some(winner.class),
            Mode::Open => None,
        };
        Ok(Prediction {
            label,
            probability,
            per_class,
        })
    }

    /// Standardizes `v` with the attached standardizer (if any) and predicts.
    pub fn predict_features(&self, v: &FeatureVector, mode: Mode) -> Result<Prediction> {
        self.predict(&self.to_model_space(v), mode)
    }

    pub fn to_model_space(&self, v: &FeatureVector) -> Vec<f64> {
        let raw = v.to_array();
        match &self.standardizer {
            Some(s) => s.transform(&raw).to_vec(),
            None => raw.to_vec(),
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.params.rho = rho;
        self.params.validate()?;
        Ok(self)
    }

    pub fn known_classes(&self) -> Vec<EventClass> {
        self.classes.iter().map(|c| c.label).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.vectors.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        self.params.validate().map_err(|e| Error::Model(e.to_string()))?;
        if self.classes.len() < 2 {
            return Err(Error::Model("model needs at least two classes".into()));
        }
        if self.standardizer.is_some() && self.dim != FEATURE_DIM {
            return Err(Error::Model(format!(
                "standardized model must have dimension {FEATURE_DIM}, has {}",
                self.dim
            )));
        }
        for w in self.classes.windows(2) {
            if w[0].label.id() >= w[1].label.id() {
                return Err(Error::Model("classes must be ordered by id and unique".into()));
            }
        }
        for cls in &self.classes {
            if cls.vectors.is_empty() {
                return Err(Error::Model(format!("class {} has no extreme vectors", cls.label)));
            }
            for v in &cls.vectors {
                if v.center.len() != self.dim || !(v.shape > 0.0) || !(v.scale > 0.0) {
                    return Err(Error::Model(format!("invalid extreme vector in class {}", cls.label)));
                }
            }
        }
        Ok(())
    }
}

/// Standardizes labeled feature vectors into model-space points.
pub fn labeled_points(rows: &[FeatureVector], standardizer: &Standardizer) -> Result<Vec<Labeled>> {
    rows.iter()
        .enumerate()
        .map(|(i, v)| {
            let label = v
                .label
                .ok_or_else(|| Error::Label(format!("training vector {i} has no label")))?;
            Ok((standardizer.transform(&v.to_array()).to_vec(), label))
        })
        .collect()
}

fn check_dims(points: &[Labeled], expected: Option<usize>) -> Result<usize> {
    let dim = match (expected, points.first()) {
        (Some(d), _) => d,
        (None, Some((x, _))) => x.len(),
        (None, None) => return Err(Error::EmptyInput),
    };
    for (x, _) in points {
        if x.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                found: x.len(),
            });
        }
    }
    Ok(dim)
}

fn group(points: &[Labeled]) -> BTreeMap<EventClass, Vec<&[f64]>> {
    let mut map: BTreeMap<EventClass, Vec<&[f64]>> = BTreeMap::new();
    for (x, l) in points {
        map.entry(*l).or_default().push(x);
    }
    map
}

/// The `k` smallest strictly positive values in ascending order; zero
/// distances carry no scale information. An all-zero input keeps one zero.
fn smallest(mut values: Vec<f64>, k: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let positive: Vec<f64> = values.iter().copied().filter(|&d| d > 0.0).take(k).collect();
    if positive.is_empty() {
        values.truncate(1);
        values
    } else {
        positive
    }
}

fn fit_tail(tail: &[f64], point: usize) -> Result<(f64, f64)> {
    if tail.iter().all(|&d| d == 0.0) {
        return Ok((DEGENERATE_SHAPE, ZERO_TAIL_SCALE));
    }
    let f = weibull::fit(tail).map_err(|e| Error::Fit {
        point,
        message: e.to_string(),
    })?;
    Ok((f.shape, f.scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use EventClass::{Du, Fa, Fv, Mp, No};

    fn p(x: &[f64], l: EventClass) -> Labeled {
        (x.to_vec(), l)
    }

    fn gaussian_clusters(n: usize, sep: f64, seed: u64) -> Vec<Labeled> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for i in 0..2 * n {
            let (cx, l) = if i % 2 == 0 { (1.0, Fa) } else { (1.0 + sep, No) };
            out.push((vec![cx + nd.sample(&mut rng), 5.0 + nd.sample(&mut rng)], l));
        }
        out
    }

    #[test]
    fn canberra_examples() {
        assert_eq!(canberra_distance(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(canberra_distance(&[3.0, -2.0], &[3.0, -2.0]).unwrap(), 0.0);
        // |1-3|/4 + |2+2|/4 = 1.5
        assert_eq!(canberra_distance(&[1.0, 2.0], &[3.0, -2.0]).unwrap(), 1.5);
        assert!(matches!(
            canberra_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn other_metrics() {
        let e = Distance::Euclidean.eval(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(e, 5.0);
        let c = Distance::Cosine.eval(&[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        assert_eq!(Distance::Cosine.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(Distance::Cosine.eval(&[2.0, 2.0], &[1.0, 1.0]).unwrap() < 1e-15);
    }

    #[test]
    fn single_point_per_class() {
        let a = [1.0, 2.0];
        let b = [2.0, 1.0];
        let d = canberra_distance(&a, &b).unwrap();
        let m = EvmModel::fit(&[p(&a, Fa), p(&b, No)], EvmParams::default()).unwrap();
        let v = &m.classes[0].vectors[0];
        assert_eq!((v.shape, v.scale), (DEGENERATE_SHAPE, 0.9 * d));
        let expected = (-(d / (0.9 * d)).powf(DEGENERATE_SHAPE)).exp();
        let pr = m.predict(&b, Mode::Closed).unwrap();
        assert_eq!(pr.per_class[0].probability, expected);
        assert_eq!(pr.label, Some(No));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            EvmModel::fit(&[p(&[1.0], Fa), p(&[2.0], Fa)], EvmParams::default()),
            Err(Error::NeedTwoClasses)
        ));
        assert!(matches!(
            EvmModel::fit(&[p(&[1.0], Fa), p(&[2.0, 1.0], No)], EvmParams::default()),
            Err(Error::Dimension { .. })
        ));
        let bad = EvmParams {
            rho: 1.0,
            ..EvmParams::default()
        };
        assert!(EvmModel::fit(&[p(&[1.0], Fa), p(&[2.0], No)], bad).is_err());
        let m = EvmModel::fit(&[p(&[1.0], Fa), p(&[2.0], No)], EvmParams::default()).unwrap();
        assert!(matches!(m.predict(&[1.0, 1.0], Mode::Open), Err(Error::Dimension { .. })));
    }

    #[test]
    fn separated_clusters_self_probability_one() {
        let train = gaussian_clusters(30, 10.0, 4);
        let m = EvmModel::fit(&train, EvmParams::default()).unwrap();
        for (x, l) in &train {
            for mode in [Mode::Open, Mode::Closed] {
                let pr = m.predict(x, mode).unwrap();
                assert_eq!(pr.label, Some(*l));
                assert_eq!(pr.probability, 1.0);
            }
        }
    }

    #[test]
    fn far_probe_rejected_in_open_mode_only() {
        let train = gaussian_clusters(20, 10.0, 5);
        let m = EvmModel::fit(&train, EvmParams::default()).unwrap();
        let far = [-1e6, -1e6];
        assert_eq!(m.predict(&far, Mode::Open).unwrap().label, None);
        assert!(m.predict(&far, Mode::Closed).unwrap().label.is_some());
    }

    #[test]
    fn open_and_closed_agree_when_not_rejected() {
        let train = gaussian_clusters(20, 3.0, 6);
        let m = EvmModel::fit(&train, EvmParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let x = [rng.random_range(-5.0..10.0), rng.random_range(0.0..10.0)];
            let open = m.predict(&x, Mode::Open).unwrap();
            let closed = m.predict(&x, Mode::Closed).unwrap();
            assert_eq!(open.per_class, closed.per_class);
            if let Some(l) = open.label {
                assert_eq!(Some(l), closed.label);
            }
            assert_eq!(open.is_unknown(), open.probability < m.params.rho);
            assert!(open.per_class.iter().all(|c| (0.0..=1.0).contains(&c.probability)));
        }
    }

    #[test]
    fn tie_goes_to_lowest_class_id() {
        // the probe is equidistant from both centers with identical fits
        let m = EvmModel::fit(&[p(&[0.0, 1.0], No), p(&[1.0, 0.0], Fa)], EvmParams::default()).unwrap();
        let pr = m.predict(&[1.0, 1.0], Mode::Closed).unwrap();
        assert_eq!(pr.per_class[0].probability, pr.per_class[1].probability);
        assert_eq!(pr.label, Some(Fa));
    }

    /// Independent brute-force EVM: every point's tail rebuilt from scratch.
    fn oracle_probability(train: &[Labeled], params: &EvmParams, class: EventClass, x: &[f64]) -> f64 {
        let mut best: f64 = 0.0;
        for (c, _) in train.iter().filter(|(_, l)| *l == class) {
            let mut d: Vec<f64> = train
                .iter()
                .filter(|(_, m)| *m != class)
                .map(|(n, _)| params.distance.eval(c, n).unwrap() * params.distance_multiplier)
                .filter(|&d| d > 0.0)
                .collect();
            d.sort_by(f64::total_cmp);
            d.truncate(params.tailsize);
            let (k, s) = if d.len() == 1 || d.iter().all(|&v| v == d[0]) {
                (DEGENERATE_SHAPE, d[0])
            } else {
                let f = weibull::fit(&d).unwrap();
                (f.shape, f.scale)
            };
            let dist = params.distance.eval(c, x).unwrap();
            best = best.max((-(dist / s).powf(k)).exp());
        }
        best
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Vec<Labeled> {
        let classes = [Fa, No, Mp, Fv];
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2 * k..=50);
        (0..n)
            .map(|i| {
                let l = classes[if i < k { i } else { rng.random_range(0..k) }];
                let off = l.id() as f64 * 1.5;
                (
                    (0..3).map(|_| off + rng.random_range(-2.0..2.0)).collect(),
                    l,
                )
            })
            .collect()
    }

    #[test]
    fn fit_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = EvmParams::default();
        for _ in 0..5 {
            let train = random_instance(&mut rng);
            let m = EvmModel::fit(&train, params).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..8.0)).collect();
                let pr = m.predict(&x, Mode::Closed).unwrap();
                for c in &pr.per_class {
                    let o = oracle_probability(&train, &params, c.class, &x);
                    assert!((o - c.probability).abs() < 1e-12, "{o} vs {}", c.probability);
                }
            }
        }
    }

    #[test]
    fn update_equals_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let all = random_instance(&mut rng);
            let split = all.len() / 2;
            let (a, b) = all.split_at(split);
            let labels_a: std::collections::BTreeSet<_> = a.iter().map(|x| x.1).collect();
            if labels_a.len() < 2 {
                continue;
            }
            let full = EvmModel::fit(&all, EvmParams::default()).unwrap();
            let inc = EvmModel::fit(a, EvmParams::default()).unwrap().update(b).unwrap();
            assert_eq!(full.len(), inc.len());
            for _ in 0..100 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..8.0)).collect();
                let f = full.predict(&x, Mode::Open).unwrap();
                let g = inc.predict(&x, Mode::Open).unwrap();
                assert_eq!(f.label, g.label);
                for (u, v) in f.per_class.iter().zip(&g.per_class) {
                    assert_eq!(u.class, v.class);
                    assert!((u.probability - v.probability).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn update_with_nothing_is_identity() {
        let m = EvmModel::fit(&gaussian_clusters(5, 4.0, 1), EvmParams::default()).unwrap();
        assert_eq!(m.update(&[]).unwrap(), m);
    }

    #[test]
    fn update_adds_new_class() {
        let m = EvmModel::fit(&gaussian_clusters(5, 4.0, 1), EvmParams::default()).unwrap();
        let center = [40.0, -3.0];
        let u = m.update(&[p(&center, Du)]).unwrap();
        assert_eq!(u.known_classes(), vec![Fa, No, Du]);
        assert_eq!(u.predict(&center, Mode::Open).unwrap().label, Some(Du));
    }

    #[test]
    fn reduce_removes_duplicates() {
        let mut train = Vec::new();
        for _ in 0..4 {
            train.push(p(&[1.0, 1.0], Fa));
            train.push(p(&[5.0, 9.0], No));
        }
        let m = EvmModel::fit(&train, EvmParams::default()).unwrap();
        for s in [0.1, 0.5, 0.999] {
            let r = m.reduce(s).unwrap();
            assert_eq!(r.len(), 2);
        }
        assert!(m.reduce(1.0).is_err());
    }

    #[test]
    fn reduce_keeps_accuracy_on_clusters() {
        let train = gaussian_clusters(50, 4.0, 12);
        let m = EvmModel::fit(&train, EvmParams::default()).unwrap();
        let r = m.reduce(0.5).unwrap();
        assert!(r.len() <= m.len());
        let acc = |model: &EvmModel| {
            train
                .iter()
                .filter(|(x, l)| model.predict(x, Mode::Closed).unwrap().label == Some(*l))
                .count() as f64
                / train.len() as f64
        };
        assert!(acc(&m) - acc(&r) <= 0.05, "{} vs {}", acc(&m), acc(&r));
        // kept vectors are a subset of the originals
        for (rc, mc) in r.classes.iter().zip(&m.classes) {
            assert!(rc.vectors.iter().all(|v| mc.vectors.contains(v)));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let train = gaussian_clusters(10, 3.0, 2);
        let m = EvmModel::fit(&train, EvmParams::default()).unwrap();
        let back = EvmModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(EvmModel::from_json("{}").is_err());
        let mut bad = m.clone();
        bad.classes[0].vectors.clear();
        assert!(EvmModel::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn fit_features_standardizes() {
        let rows: Vec<FeatureVector> = (0..12)
            .map(|i| FeatureVector {
                mean: i as f64,
                std: 1.0 + (i % 3) as f64,
                min: -(i as f64),
                max: 2.0 * i as f64,
                n_zero: i % 2,
                n_minmax: i,
                label: Some(if i < 6 { Fa } else { No }),
            })
            .collect();
        let m = EvmModel::fit_features(&rows, EvmParams::default()).unwrap();
        assert!(m.standardizer.is_some());
        for r in &rows {
            assert_eq!(m.predict_features(r, Mode::Open).unwrap().label, r.label);
        }
    }

    proptest! {
        #[test]
        fn canberra_symmetric_nonnegative(
            a in prop::collection::vec(-100.0..100.0f64, 6),
            b in prop::collection::vec(-100.0..100.0f64, 6),
        ) {
            let ab = canberra_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, canberra_distance(&b, &a).unwrap());
            prop_assert!((0.0..=6.0).contains(&ab));
        }

        #[test]
        fn prediction_invariant_to_training_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train = random_instance(&mut rng);
            let mut shuffled = train.clone();
            shuffled.reverse();
            let m1 = EvmModel::fit(&train, EvmParams::default()).unwrap();
            let m2 = EvmModel::fit(&shuffled, EvmParams::default()).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..8.0)).collect();
                let a = m1.predict(&x, Mode::Open).unwrap();
                let b = m2.predict(&x, Mode::Open).unwrap();
                prop_assert_eq!(a.label, b.label);
                prop_assert!((a.probability - b.probability).abs() < 1e-12);
            }
        }
    }
}
