//! Synthetic detector benchmarks.
//!
//! A [`DetectorProfile`] gives, for every source family, the probability
//! that the detector lands on the correct side of 0.5. Continuous
//! detectors then draw a confidence `b ~ Beta(sharpness, 1)` and emit
//! `0.5 ± 0.5·b` on the chosen side; binary detectors emit the chosen pole.
//! Records carry their family in the `subset` tag, which is what
//! [`perturb`] uses to regenerate scores with decayed skills.
//!
//! Every sample draws from its own ChaCha stream `(seed, sample index)`,
//! so output does not depend on generation order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::score::{sample_balanced, DetectorKind, DetectorMeta, Label, SampleRecord, ScoreMatrix};

/// Broad detector category, which sets how fast skills decay under
/// perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorClass {
    /// Small artifact-keyed discriminative models.
    Lightweight,
    /// Multimodal LLM judges.
    Mllm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub name: String,
    pub kind: DetectorKind,
    pub class: DetectorClass,
    pub per_family_skill: BTreeMap<String, f64>,
    pub sharpness: f64,
}

impl DetectorProfile {
    fn validate(&self) -> Result<()> {
        if !self.sharpness.is_finite() || self.sharpness <= 0.0 {
            return Err(FuseError::document(
                format!("profiles.{}.sharpness", self.name),
                "sharpness must be positive",
            ));
        }
        for (family, &skill) in &self.per_family_skill {
            if !(0.0..=1.0).contains(&skill) {
                return Err(FuseError::document(
                    format!("profiles.{}.per_family_skill.{family}", self.name),
                    format!("skill {skill} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }

    fn skill(&self, family: &str) -> Result<f64> {
        self.per_family_skill.get(family).copied().ok_or_else(|| {
            FuseError::Precondition(format!(
                "profile `{}` has no skill for family `{family}`",
                self.name
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCount {
    pub family: String,
    pub class: Label,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub families: Vec<FamilyCount>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Blur,
    Jpeg,
    Resize,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Blur, Channel::Jpeg, Channel::Resize];

    fn salt(self) -> u64 {
        match self {
            Channel::Blur => 0xB1,
            Channel::Jpeg => 0x1C,
            Channel::Resize => 0x5E,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Blur => "blur",
            Channel::Jpeg => "jpeg",
            Channel::Resize => "resize",
        })
    }
}

pub const LIGHTWEIGHT_DECAY: f64 = 0.85;
pub const MLLM_DECAY: f64 = 0.97;
pub const SEVERITY_LEVELS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub channel: Channel,
    pub severity: u32,
    /// Multiplicative skill factor per severity level.
    pub skill_decay: BTreeMap<DetectorClass, f64>,
}

impl PerturbationSpec {
    pub fn with_default_decay(channel: Channel, severity: u32) -> Self {
        PerturbationSpec {
            channel,
            severity,
            skill_decay: BTreeMap::from([
                (DetectorClass::Lightweight, LIGHTWEIGHT_DECAY),
                (DetectorClass::Mllm, MLLM_DECAY),
            ]),
        }
    }

    /// Skill after `severity` rounds of decay, clamped to [0, 1].
    pub fn decayed_skill(&self, class: DetectorClass, skill: f64) -> f64 {
        let decay = self.skill_decay.get(&class).copied().unwrap_or(1.0);
        let value = skill * decay.powi(self.severity as i32);
        if !(0.0..=1.0).contains(&value) {
            warn!("decayed skill {value} for {class:?} clamped to [0, 1]");
        }
        value.clamp(0.0, 1.0)
    }
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One score per profile. Every detector consumes exactly two uniforms, so
/// streams stay aligned across kinds and skill changes.
fn draw_scores(
    profiles: &[DetectorProfile],
    skills: &[f64],
    label: Label,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    profiles
        .iter()
        .zip(skills)
        .map(|(profile, &skill)| {
            let correct = rng.random::<f64>() < skill;
            let confidence = rng.random::<f64>().powf(1.0 / profile.sharpness);
            let says_fake = (label == Label::Fake) == correct;
            match profile.kind {
                DetectorKind::Binary => {
                    if says_fake {
                        1.0
                    } else {
                        0.0
                    }
                }
                DetectorKind::Continuous => {
                    if says_fake {
                        0.5 + 0.5 * confidence
                    } else {
                        0.5 - 0.5 * confidence
                    }
                }
            }
        })
        .collect()
}

fn check_profiles(profiles: &[DetectorProfile]) -> Result<()> {
    if profiles.is_empty() {
        return Err(FuseError::Precondition(
            "at least one detector profile is required".into(),
        ));
    }
    let mut names = HashSet::new();
    for p in profiles {
        if p.name.is_empty() || !names.insert(p.name.as_str()) {
            return Err(FuseError::Schema(format!(
                "profile names must be unique and non-empty, got `{}`",
                p.name
            )));
        }
        p.validate()?;
    }
    Ok(())
}

fn registry_of(profiles: &[DetectorProfile]) -> Vec<DetectorMeta> {
    profiles
        .iter()
        .map(|p| DetectorMeta::new(p.name.clone(), p.kind))
        .collect()
}

pub fn generate(spec: &BenchmarkSpec, profiles: &[DetectorProfile]) -> Result<ScoreMatrix> {
    check_profiles(profiles)?;
    for entry in &spec.families {
        if entry.count == 0 {
            return Err(FuseError::Precondition(format!(
                "family `{}` has a zero count in benchmark `{}`",
                entry.family, spec.name
            )));
        }
        for p in profiles {
            p.skill(&entry.family)?;
        }
    }
    let mut records = Vec::new();
    for entry in &spec.families {
        let skills: Vec<f64> = profiles
            .iter()
            .map(|p| p.skill(&entry.family))
            .collect::<Result<_>>()?;
        for _ in 0..entry.count {
            let index = records.len();
            let mut rng = sample_rng(spec.seed, index);
            records.push(SampleRecord {
                sample_id: format!("{}-{index:06}", spec.name),
                label: entry.class,
                benchmark: spec.name.clone(),
                subset: entry.family.clone(),
                scores: draw_scores(profiles, &skills, entry.class, &mut rng),
            });
        }
    }
    ScoreMatrix::new(registry_of(profiles), records)
}

/// Regenerates every score with decayed skills. Ids, labels, tags and the
/// registry are unchanged.
pub fn perturb(
    matrix: &ScoreMatrix,
    profiles: &[DetectorProfile],
    spec: &PerturbationSpec,
    seed: u64,
) -> Result<ScoreMatrix> {
    check_profiles(profiles)?;
    matrix.ensure_same_registry(&registry_of(profiles))?;
    let mut skill_cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut records = Vec::with_capacity(matrix.n_samples());
    for (index, record) in matrix.records().iter().enumerate() {
        if !skill_cache.contains_key(record.subset.as_str()) {
            let skills = profiles
                .iter()
                .map(|p| Ok(spec.decayed_skill(p.class, p.skill(&record.subset)?)))
                .collect::<Result<Vec<f64>>>()?;
            skill_cache.insert(record.subset.as_str(), skills);
        }
        let skills = &skill_cache[record.subset.as_str()];
        let mut rng = sample_rng(seed, index);
        records.push(SampleRecord {
            scores: draw_scores(profiles, skills, record.label, &mut rng),
            ..record.clone()
        });
    }
    ScoreMatrix::new(matrix.registry().to_vec(), records)
}

/// Mixes a base seed with a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Canned benchmark suite with complementary detector profiles.
#[derive(Debug, Clone)]
pub struct Suite {
    pub profiles: Vec<DetectorProfile>,
    pub dev: ScoreMatrix,
    pub bench_specs: Vec<BenchmarkSpec>,
    pub benches: Vec<ScoreMatrix>,
}

pub const DEV_PER_CLASS_PER_SUBSET: usize = 50;
const DEV_POOL_PER_CLASS: usize = 80;

/// Source-family groups and their member counts in the development pool.
const GROUPS: [(&str, usize); 5] = [
    ("gan", 6),
    ("diffusion", 8),
    ("autoregressive", 4),
    ("commercial", 4),
    ("faceswap", 3),
];

/// Per-group skills of the six simulated detectors, columns in
/// [`GROUPS`] order. The three lightweight detectors are sharp on the
/// generator families they were built for and poor on commercial
/// generators; the MLLM judges are middling everywhere but strongest on
/// commercial content.
const DETECTORS: [(&str, DetectorKind, DetectorClass, f64, [f64; 5]); 6] = [
    (
        "artifact_a",
        DetectorKind::Continuous,
        DetectorClass::Lightweight,
        4.0,
        [0.97, 0.68, 0.62, 0.40, 0.88],
    ),
    (
        "artifact_b",
        DetectorKind::Continuous,
        DetectorClass::Lightweight,
        4.0,
        [0.72, 0.96, 0.74, 0.45, 0.70],
    ),
    (
        "artifact_c",
        DetectorKind::Continuous,
        DetectorClass::Lightweight,
        4.0,
        [0.90, 0.88, 0.66, 0.50, 0.62],
    ),
    (
        "semantic_a",
        DetectorKind::Binary,
        DetectorClass::Mllm,
        1.0,
        [0.60, 0.62, 0.64, 0.66, 0.58],
    ),
    (
        "semantic_b",
        DetectorKind::Binary,
        DetectorClass::Mllm,
        1.0,
        [0.70, 0.72, 0.80, 0.86, 0.66],
    ),
    (
        "semantic_c",
        DetectorKind::Binary,
        DetectorClass::Mllm,
        1.0,
        [0.76, 0.78, 0.85, 0.91, 0.70],
    ),
];

/// Benchmarks as per-group record counts per class, columns in
/// [`GROUPS`] order.
const BENCHMARKS: [(&str, [usize; 5]); 6] = [
    ("gan_bench", [120, 20, 0, 0, 20]),
    ("diffusion_bench", [20, 120, 20, 0, 0]),
    ("mixed_bench", [40, 40, 40, 40, 40]),
    ("wild_bench", [0, 20, 30, 120, 0]),
    ("face_bench", [20, 20, 0, 0, 100]),
    ("chameleon_bench", [0, 30, 60, 60, 20]),
];

fn family_tags() -> Vec<(usize, String)> {
    GROUPS
        .iter()
        .enumerate()
        .flat_map(|(g, (name, n))| (1..=*n).map(move |k| (g, format!("{name}_{k:02}"))))
        .collect()
}

/// The six simulated detector profiles, with small per-family jitter on
/// the group skills.
pub fn complementary_profiles(seed: u64) -> Vec<DetectorProfile> {
    let families = family_tags();
    DETECTORS
        .iter()
        .enumerate()
        .map(|(d, (name, kind, class, sharpness, skills))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + d as u64));
            let per_family_skill = families
                .iter()
                .map(|(g, tag)| {
                    let jitter = rng.random_range(-0.03..=0.03);
                    (tag.clone(), (skills[*g] + jitter).clamp(0.0, 1.0))
                })
                .collect();
            DetectorProfile {
                name: name.to_string(),
                kind: *kind,
                class: *class,
                per_family_skill,
                sharpness: *sharpness,
            }
        })
        .collect()
}

fn spread(total: usize, members: &[String]) -> Vec<(String, usize)> {
    let n = members.len();
    members
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), total / n + usize::from(i < total % n)))
        .filter(|(_, c)| *c > 0)
        .collect()
}

pub fn complementary_bench_specs(seed: u64) -> Vec<BenchmarkSpec> {
    let families = family_tags();
    BENCHMARKS
        .iter()
        .enumerate()
        .map(|(b, (name, per_group))| {
            let mut entries = Vec::new();
            for (g, &total) in per_group.iter().enumerate() {
                let members: Vec<String> = families
                    .iter()
                    .filter(|(fg, _)| *fg == g)
                    .map(|(_, t)| t.clone())
                    .collect();
                for class in [Label::Real, Label::Fake] {
                    for (family, count) in spread(total, &members) {
                        entries.push(FamilyCount {
                            family,
                            class,
                            count,
                        });
                    }
                }
            }
            BenchmarkSpec {
                name: name.to_string(),
                families: entries,
                seed: derive_seed(seed, 1 + b as u64),
            }
        })
        .collect()
}

/// Development pool covering all 25 families, before balanced sampling.
pub fn dev_pool_spec(seed: u64) -> BenchmarkSpec {
    let families = family_tags()
        .into_iter()
        .flat_map(|(_, tag)| {
            [Label::Real, Label::Fake].map(|class| FamilyCount {
                family: tag.clone(),
                class,
                count: DEV_POOL_PER_CLASS,
            })
        })
        .collect();
    BenchmarkSpec {
        name: "dev".into(),
        families,
        seed: derive_seed(seed, 0),
    }
}

pub fn complementary_suite(seed: u64) -> Result<Suite> {
    let profiles = complementary_profiles(seed);
    let pool = generate(&dev_pool_spec(seed), &profiles)?;
    let dev = sample_balanced(&pool, DEV_PER_CLASS_PER_SUBSET, derive_seed(seed, 50))?;
    let bench_specs = complementary_bench_specs(seed);
    let benches = bench_specs
        .iter()
        .map(|s| generate(s, &profiles))
        .collect::<Result<Vec<_>>>()?;
    Ok(Suite {
        profiles,
        dev,
        bench_specs,
        benches,
    })
}

impl Suite {
    /// Every benchmark under every channel and severity `1..=SEVERITY_LEVELS`
    /// with the default decay constants.
    pub fn perturbed(&self) -> Result<Vec<(PerturbationSpec, ScoreMatrix)>> {
        let mut out = Vec::new();
        for channel in Channel::ALL {
            for severity in 1..=SEVERITY_LEVELS {
                let spec = PerturbationSpec::with_default_decay(channel, severity);
                for (bench, bspec) in self.benches.iter().zip(&self.bench_specs) {
                    let seed = derive_seed(bspec.seed, channel.salt());
                    out.push((spec.clone(), perturb(bench, &self.profiles, &spec, seed)?));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(kind: DetectorKind, skill: f64) -> DetectorProfile {
        DetectorProfile {
            name: "det".into(),
            kind,
            class: DetectorClass::Lightweight,
            per_family_skill: BTreeMap::from([("fam".to_string(), skill)]),
            sharpness: 3.0,
        }
    }

    fn spec(n: usize, seed: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            name: "b".into(),
            families: vec![
                FamilyCount {
                    family: "fam".into(),
                    class: Label::Real,
                    count: n / 2,
                },
                FamilyCount {
                    family: "fam".into(),
                    class: Label::Fake,
                    count: n - n / 2,
                },
            ],
            seed,
        }
    }

    fn accuracy(m: &ScoreMatrix, det: usize) -> f64 {
        let correct = m
            .records()
            .iter()
            .filter(|r| Label::from_score(r.scores[det]) == r.label)
            .count();
        correct as f64 / m.n_samples() as f64
    }

    #[test]
    fn perfect_binary_detector_emits_soft_labels() {
        let m = generate(&spec(200, 1), &[profile(DetectorKind::Binary, 1.0)]).unwrap();
        for r in m.records() {
            assert_eq!(r.scores[0], crate::score::unify_binary(r.label));
        }
    }

    #[test]
    fn coin_flip_binary_detector() {
        let m = generate(&spec(10_000, 2), &[profile(DetectorKind::Binary, 0.5)]).unwrap();
        assert!((accuracy(&m, 0) - 0.5).abs() <= 0.02);
    }

    #[test]
    fn continuous_scores_stay_in_unit_interval_and_on_side() {
        let m = generate(&spec(2000, 3), &[profile(DetectorKind::Continuous, 0.8)]).unwrap();
        assert!(m
            .records()
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.scores[0])));
        let n = m.n_samples() as f64;
        let sigma = (0.8f64 * 0.2 / n).sqrt();
        assert!((accuracy(&m, 0) - 0.8).abs() <= 4.0 * sigma);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let p = [profile(DetectorKind::Continuous, 0.7)];
        assert_eq!(
            generate(&spec(50, 9), &p).unwrap(),
            generate(&spec(50, 9), &p).unwrap()
        );
        assert_ne!(
            generate(&spec(50, 9), &p).unwrap(),
            generate(&spec(50, 10), &p).unwrap()
        );
    }

    #[test]
    fn uncovered_family_is_an_error() {
        let mut s = spec(10, 0);
        s.families[0].family = "other".into();
        assert!(generate(&s, &[profile(DetectorKind::Binary, 0.9)]).is_err());
    }

    #[test]
    fn severity_zero_is_identity_under_same_seed() {
        let p = [profile(DetectorKind::Continuous, 0.9)];
        let m = generate(&spec(100, 4), &p).unwrap();
        let same = perturb(
            &m,
            &p,
            &PerturbationSpec::with_default_decay(Channel::Jpeg, 0),
            4,
        )
        .unwrap();
        assert_eq!(same, m);
    }

    #[test]
    fn decay_arithmetic_and_clamping() {
        let mut spec = PerturbationSpec::with_default_decay(Channel::Blur, 2);
        spec.skill_decay.insert(DetectorClass::Lightweight, 0.9);
        assert!((spec.decayed_skill(DetectorClass::Lightweight, 0.9) - 0.729).abs() < 1e-12);
        spec.skill_decay.insert(DetectorClass::Mllm, -0.5);
        spec.severity = 1;
        assert_eq!(spec.decayed_skill(DetectorClass::Mllm, 0.9), 0.0);
    }

    #[test]
    fn perturbation_keeps_ids_labels_registry() {
        let p = [profile(DetectorKind::Continuous, 0.9)];
        let m = generate(&spec(100, 5), &p).unwrap();
        let q = perturb(
            &m,
            &p,
            &PerturbationSpec::with_default_decay(Channel::Resize, 3),
            77,
        )
        .unwrap();
        assert_eq!(q.registry(), m.registry());
        for (a, b) in m.records().iter().zip(q.records()) {
            assert_eq!(
                (&a.sample_id, a.label, &a.benchmark, &a.subset),
                (&b.sample_id, b.label, &b.benchmark, &b.subset)
            );
        }
    }

    #[test]
    fn suite_shape() {
        let suite = complementary_suite(42).unwrap();
        assert_eq!(suite.dev.n_samples(), 2500);
        assert_eq!(suite.dev.n_detectors(), 6);
        assert_eq!(suite.benches.len(), 6);
        for b in &suite.benches {
            let (real, fake) = b.class_counts();
            assert!(real > 0 && fake > 0);
        }
        let subsets: HashSet<&str> = suite
            .dev
            .records()
            .iter()
            .map(|r| r.subset.as_str())
            .collect();
        assert_eq!(subsets.len(), 25);
    }
}
