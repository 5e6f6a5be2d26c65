//! Desk-scale measurement harness: precision/recall against labeled ground
//! truth, payload-size-vs-fidelity sweeps, and a deterministic synthetic
//! texture corpus generator that provides that ground truth.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dct::QuantTable;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pnm::save_pgm;
use crate::retrieval::{rank, Index, RankedResult};
use crate::stego::{embed, psnr, reencode, BitString};

// ---------------------------------------------------------------------------
// Deterministic randomness
//
// All randomized measurements draw from this 64-bit linear congruential
// generator (Knuth's MMIX multiplier), pinned here so every run — and every
// reimplementation — produces identical payload bits:
//
//     x ← x · 6364136223846793005 + 1442695040888963407   (mod 2^64)
//
// A payload bit is the top bit of x; a unit float is (x >> 11) / 2^53.

const LCG_MUL: u64 = 6364136223846793005;
const LCG_ADD: u64 = 1442695040888963407;

/// Seeded deterministic generator; see the module constants for the exact
/// recurrence.
#[derive(Clone, Debug)]
pub struct DetRng(u64);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        // one warm-up step so nearby seeds diverge immediately
        let mut rng = Self(seed);
        rng.next_u64();
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(LCG_MUL).wrapping_add(LCG_ADD);
        self.0
    }

    /// One payload bit: the most significant bit of the state.
    pub fn bit(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// `n` payload bits from a fresh generator at `seed`.
pub fn random_bits(seed: u64, n: usize) -> BitString {
    let mut rng = DetRng::new(seed);
    BitString::new((0..n).map(|_| rng.bit()).collect())
}

// ---------------------------------------------------------------------------
// Precision / recall

/// Retrieval quality at one rank cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every cutoff `k = 1..=results.len()`:
/// precision@k = |top-k ∩ relevant| / k, recall@k = |top-k ∩ relevant| /
/// |relevant|.
pub fn precision_recall(
    results: &[RankedResult],
    relevant: &BTreeSet<String>,
) -> Result<Vec<PrPoint>> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    let mut points = Vec::with_capacity(results.len());
    let mut hits = 0usize;
    for (i, r) in results.iter().enumerate() {
        if relevant.contains(&r.id) {
            hits += 1;
        }
        points.push(PrPoint {
            k: i + 1,
            precision: hits as f64 / (i + 1) as f64,
            recall: hits as f64 / relevant.len() as f64,
        });
    }
    Ok(points)
}

/// Element-wise mean of equal-length curves.
pub fn mean_pr(curves: &[Vec<PrPoint>]) -> Vec<PrPoint> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    let n = curves.len() as f64;
    (0..first.len())
        .map(|i| PrPoint {
            k: first[i].k,
            precision: curves.iter().map(|c| c[i].precision).sum::<f64>() / n,
            recall: curves.iter().map(|c| c[i].recall).sum::<f64>() / n,
        })
        .collect()
}

/// Leave-one-out class retrieval: each labeled record queries the rest of
/// the corpus, relevant = the other members of its class per `class_of`.
/// Returns one curve per labeled query in record order.
pub fn class_retrieval_curves_by(
    idx: &Index,
    class_of: impl Fn(&crate::retrieval::IndexRecord) -> Option<String>,
) -> Result<Vec<Vec<PrPoint>>> {
    let mut curves = Vec::new();
    for record in idx.records() {
        let Some(class) = class_of(record) else {
            continue;
        };
        let relevant: BTreeSet<String> = idx
            .records()
            .iter()
            .filter(|r| r.id != record.id && class_of(r).as_deref() == Some(&class))
            .map(|r| r.id.clone())
            .collect();
        let ranked: Vec<RankedResult> = rank(&record.features, idx, idx.len())?
            .into_iter()
            .filter(|r| r.id != record.id)
            .collect();
        curves.push(precision_recall(&ranked, &relevant)?);
    }
    if curves.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    Ok(curves)
}

/// [`class_retrieval_curves_by`] using each record's `class` attribute.
pub fn class_retrieval_curves(idx: &Index) -> Result<Vec<Vec<PrPoint>>> {
    class_retrieval_curves_by(idx, |r| {
        r.attributes
            .iter()
            .find(|(k, _)| k == "class")
            .map(|(_, v)| v.clone())
    })
}

// ---------------------------------------------------------------------------
// Payload vs. fidelity sweep

/// Fidelity of one payload size.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepOutcome {
    Measured {
        /// PSNR of the stego image against the plain quantize/dequantize
        /// re-encode of the cover (isolates the embedding cost).
        psnr_vs_baseline: f64,
        /// PSNR of the stego image against the raw cover.
        psnr_vs_cover: f64,
    },
    /// Requested more bits than the cover has blocks.
    OverCapacity { capacity: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub payload_bits: usize,
    pub outcome: SweepOutcome,
}

/// Embeds seeded random payloads of each requested size and measures the
/// fidelity cost. Oversized requests yield an [`SweepOutcome::OverCapacity`]
/// row rather than aborting the sweep. Bit-for-bit reproducible per seed.
pub fn psnr_sweep(
    cover: &GrayImage,
    payload_sizes: &[usize],
    seed: u64,
    table: &QuantTable,
    include_dc: bool,
) -> Result<Vec<SweepRow>> {
    let baseline = reencode(cover, table)?;
    let capacity = crate::stego::capacity(cover);
    let mut rows = Vec::with_capacity(payload_sizes.len());
    for &bits in payload_sizes {
        if bits > capacity {
            rows.push(SweepRow {
                payload_bits: bits,
                outcome: SweepOutcome::OverCapacity { capacity },
            });
            continue;
        }
        // independent stream per size so rows don't depend on sweep order
        let payload = random_bits(seed ^ (bits as u64).wrapping_mul(0x9E3779B97F4A7C15), bits);
        let stego = embed(cover, &payload, table, include_dc)?;
        rows.push(SweepRow {
            payload_bits: bits,
            outcome: SweepOutcome::Measured {
                psnr_vs_baseline: psnr(&stego, &baseline)?,
                psnr_vs_cover: psnr(&stego, cover)?,
            },
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Synthetic texture corpus

/// Maximum distinct texture classes; each is a pinned (frequency,
/// orientation) pair, frequencies all distinct so classes stay separable
/// after rotation normalization.
pub const MAX_CLASSES: usize = 8;

const CLASS_PARAMS: [(f64, f64); MAX_CLASSES] = [
    // (cycles/pixel, degrees)
    (0.08, 0.0),
    (0.14, 30.0),
    (0.23, 60.0),
    (0.36, 90.0),
    (0.055, 120.0),
    (0.105, 150.0),
    (0.18, 15.0),
    (0.29, 45.0),
];

const GRATING_AMPLITUDE: f64 = 80.0;

/// One grating instance: base class geometry plus per-instance phase and a
/// rotation nudge, with uniform noise at 10% of the grating amplitude.
fn grating(size: u32, freq: f64, theta_deg: f64, rng: &mut DetRng) -> GrayImage {
    let theta = (theta_deg + (rng.unit() * 2.0 - 1.0) * 5.0).to_radians();
    let phase = rng.unit() * 2.0 * std::f64::consts::PI;
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let mut noise = rng.clone();
    GrayImage::from_fn(size, size, |x, y| {
        let proj = x as f64 * cos_t + y as f64 * sin_t;
        let wave = (2.0 * std::f64::consts::PI * freq * proj + phase).cos();
        let n = (noise.unit() * 2.0 - 1.0) * GRATING_AMPLITUDE * 0.1;
        (128.0 + GRATING_AMPLITUDE * wave + n)
            .round()
            .clamp(0.0, 255.0) as u8
    })
}

/// Writes a labeled grating corpus: `per_class` instances of each class as
/// `c<class>_<index>.pgm` plus a `manifest.tsv` of `id<TAB>class` lines.
/// Same seed → byte-identical files. Returns the manifest entries.
pub fn gen_corpus(
    out_dir: &Path,
    classes: usize,
    per_class: usize,
    size: u32,
    seed: u64,
) -> Result<Vec<(String, String)>> {
    if classes == 0 || classes > MAX_CLASSES {
        return Err(Error::BadCorpusParams(format!(
            "classes must be in 1..={MAX_CLASSES}, got {classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::BadCorpusParams("per_class must be >= 1".into()));
    }
    if size < 64 {
        return Err(Error::BadCorpusParams(format!(
            "size must be >= 64, got {size}"
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::with_capacity(classes * per_class);
    for (c, &(freq, theta)) in CLASS_PARAMS[..classes].iter().enumerate() {
        for i in 0..per_class {
            // per-image stream keyed by (class, instance), not by write order
            let mut rng =
                DetRng::new(seed ^ ((c * 1_000_003 + i) as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let img = grating(size, freq, theta, &mut rng);
            let id = format!("c{c}_{i:03}.pgm");
            save_pgm(&img, &out_dir.join(&id))?;
            manifest.push((id, format!("c{c}")));
        }
    }
    let lines: String = manifest
        .iter()
        .map(|(id, class)| format!("{id}\t{class}\n"))
        .collect();
    std::fs::write(out_dir.join("manifest.tsv"), lines)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::retrieval::{build_index, distance};
    use proptest::prelude::*;

    #[test]
    fn rng_matches_pinned_recurrence() {
        let mut rng = DetRng::new(42);
        // seed 42 after one warm-up step
        let want = 42u64.wrapping_mul(LCG_MUL).wrapping_add(LCG_ADD);
        assert_eq!(rng.0, want);
        let next = rng.next_u64();
        assert_eq!(next, want.wrapping_mul(LCG_MUL).wrapping_add(LCG_ADD));
        let mut a = DetRng::new(7);
        let mut b = DetRng::new(7);
        assert_eq!(
            (0..64).map(|_| a.bit()).collect::<Vec<_>>(),
            (0..64).map(|_| b.bit()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn unit_stays_in_half_open_range() {
        let mut rng = DetRng::new(0);
        for _ in 0..10_000 {
            let u = rng.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn random_bits_are_balanced_and_deterministic() {
        let bits = random_bits(9, 10_000);
        assert_eq!(bits.len(), 10_000);
        assert_eq!(bits.bits(), random_bits(9, 10_000).bits());
        let ones = bits.bits().iter().filter(|&&b| b).count();
        assert!((4_500..5_500).contains(&ones), "ones = {ones}");
        assert_ne!(bits.bits(), random_bits(10, 10_000).bits());
    }

    fn ranked(ids: &[&str]) -> Vec<RankedResult> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| RankedResult {
                id: id.to_string(),
                distance: i as f64,
            })
            .collect()
    }

    fn idset(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn precision_recall_counts_hits() {
        // top-4 = {R, N, R, N}, |relevant| = 4
        let results = ranked(&["r1", "n1", "r2", "n2"]);
        let relevant = idset(&["r1", "r2", "r3", "r4"]);
        let points = precision_recall(&results, &relevant).unwrap();
        assert_eq!(points[3].precision, 0.5);
        assert_eq!(points[3].recall, 0.5);
        assert_eq!(
            points[0],
            PrPoint {
                k: 1,
                precision: 1.0,
                recall: 0.25
            }
        );
    }

    #[test]
    fn all_relevant_top_gives_unit_precision() {
        let results = ranked(&["a", "b", "c", "d", "e"]);
        let points = precision_recall(&results, &idset(&["a", "b", "c", "d", "e"])).unwrap();
        assert!(points.iter().all(|p| p.precision == 1.0));
        assert_eq!(points[4].recall, 1.0);
    }

    #[test]
    fn full_retrieval_reaches_total_recall() {
        let results = ranked(&["a", "b", "c", "d"]);
        let points = precision_recall(&results, &idset(&["d", "b"])).unwrap();
        assert_eq!(points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn empty_relevant_set_is_an_error() {
        let results = ranked(&["a"]);
        assert!(matches!(
            precision_recall(&results, &BTreeSet::new()),
            Err(Error::EmptyRelevantSet)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pr_matches_set_intersection_oracle(
            perm in Just(()).prop_perturb(|_, mut rng| {
                let mut ids: Vec<usize> = (0..30).collect();
                for i in (1..ids.len()).rev() {
                    ids.swap(i, rng.random_range(0..=i));
                }
                ids
            }),
            mask in proptest::collection::vec(any::<bool>(), 30),
        ) {
            prop_assume!(mask.iter().any(|&b| b));
            let results: Vec<RankedResult> = perm.iter().map(|&i| RankedResult {
                id: format!("id{i}"),
                distance: 0.0,
            }).collect();
            let relevant: BTreeSet<String> = mask.iter().enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| format!("id{i}"))
                .collect();
            let points = precision_recall(&results, &relevant).unwrap();
            let mut prev_recall = 0.0;
            for p in &points {
                // oracle: recount via explicit set intersection
                let topk: BTreeSet<String> =
                    results[..p.k].iter().map(|r| r.id.clone()).collect();
                let hits = topk.intersection(&relevant).count();
                prop_assert_eq!(p.precision, hits as f64 / p.k as f64);
                prop_assert_eq!(p.recall, hits as f64 / relevant.len() as f64);
                // hit counts are integers; recall never decreases
                prop_assert!((p.precision * p.k as f64).round() == hits as f64);
                prop_assert!(p.recall >= prev_recall);
                prev_recall = p.recall;
            }
        }
    }

    #[test]
    fn mean_pr_averages_pointwise() {
        let a = vec![PrPoint {
            k: 1,
            precision: 1.0,
            recall: 0.5,
        }];
        let b = vec![PrPoint {
            k: 1,
            precision: 0.0,
            recall: 0.25,
        }];
        let m = mean_pr(&[a, b]);
        assert_eq!(
            m,
            vec![PrPoint {
                k: 1,
                precision: 0.5,
                recall: 0.375
            }]
        );
        assert!(mean_pr(&[]).is_empty());
    }

    fn sweep_cover() -> GrayImage {
        let mut rng = DetRng::new(0xC0FFEE);
        grating(128, 0.2, 30.0, &mut rng)
    }

    #[test]
    fn sweep_zero_bits_is_lossless_against_baseline() {
        let cover = sweep_cover();
        let rows = psnr_sweep(&cover, &[0], 1, &QuantTable::annex_k(), false).unwrap();
        match rows[0].outcome {
            SweepOutcome::Measured {
                psnr_vs_baseline, ..
            } => {
                assert_eq!(psnr_vs_baseline, f64::INFINITY);
            }
            _ => panic!("expected a measurement"),
        }
    }

    #[test]
    fn sweep_flags_oversized_payloads_and_repeats_exactly() {
        let cover = sweep_cover(); // 16×16 = 256 blocks
        let sizes = [100, 256, 257, 100_000];
        let rows = psnr_sweep(&cover, &sizes, 7, &QuantTable::annex_k(), false).unwrap();
        assert!(matches!(rows[0].outcome, SweepOutcome::Measured { .. }));
        assert!(matches!(rows[1].outcome, SweepOutcome::Measured { .. }));
        assert_eq!(
            rows[2].outcome,
            SweepOutcome::OverCapacity { capacity: 256 }
        );
        assert_eq!(
            rows[3].outcome,
            SweepOutcome::OverCapacity { capacity: 256 }
        );
        let again = psnr_sweep(&cover, &sizes, 7, &QuantTable::annex_k(), false).unwrap();
        assert_eq!(rows, again);
        // order independence: each size draws its own stream
        let rev: Vec<usize> = sizes.iter().rev().copied().collect();
        let mut back = psnr_sweep(&cover, &rev, 7, &QuantTable::annex_k(), false).unwrap();
        back.reverse();
        assert_eq!(rows, back);
    }

    #[test]
    fn sweep_psnr_drops_as_payload_grows() {
        let cover = sweep_cover();
        let rows = psnr_sweep(&cover, &[10, 250], 3, &QuantTable::annex_k(), false).unwrap();
        let p = |row: &SweepRow| match row.outcome {
            SweepOutcome::Measured {
                psnr_vs_baseline, ..
            } => psnr_vs_baseline,
            _ => panic!("expected a measurement"),
        };
        assert!(p(&rows[1]) < p(&rows[0]));
    }

    #[test]
    fn corpus_layout_counts_and_determinism() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let manifest = gen_corpus(dir_a.path(), 4, 4, 64, 42).unwrap();
        assert_eq!(manifest.len(), 16);
        assert_eq!(manifest[0], ("c0_000.pgm".to_string(), "c0".to_string()));
        assert_eq!(manifest[15], ("c3_003.pgm".to_string(), "c3".to_string()));
        let listed = std::fs::read_dir(dir_a.path()).unwrap().count();
        assert_eq!(listed, 17); // 16 images + manifest.tsv
        let tsv = std::fs::read_to_string(dir_a.path().join("manifest.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), 16);
        assert!(tsv.starts_with("c0_000.pgm\tc0\n"));

        gen_corpus(dir_b.path(), 4, 4, 64, 42).unwrap();
        for (id, _) in &manifest {
            let a = std::fs::read(dir_a.path().join(id)).unwrap();
            let b = std::fs::read(dir_b.path().join(id)).unwrap();
            assert_eq!(a, b, "{id} differs between same-seed runs");
        }
        let other = tempfile::tempdir().unwrap();
        gen_corpus(other.path(), 4, 4, 64, 43).unwrap();
        let a = std::fs::read(dir_a.path().join("c0_000.pgm")).unwrap();
        let b = std::fs::read(other.path().join("c0_000.pgm")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn corpus_rejects_bad_parameters() {
        let dir = tempfile::tempdir().unwrap();
        for (c, p, s) in [(0, 1, 64), (9, 1, 64), (1, 0, 64), (1, 1, 63)] {
            assert!(matches!(
                gen_corpus(dir.path(), c, p, s, 1),
                Err(Error::BadCorpusParams(_))
            ));
        }
    }

    #[test]
    fn classes_separate_under_the_feature_distance() {
        // corpus self-test: same-class pairs must sit at least 2× closer
        // (on mean distance) than cross-class pairs
        let dir = tempfile::tempdir().unwrap();
        gen_corpus(dir.path(), 4, 3, 128, 7).unwrap();
        let cfg = Config::default();
        let idx = build_index(dir.path(), &cfg, false).unwrap().index;
        let records = idx.records();
        let class = |i: usize| {
            &records[i]
                .attributes
                .iter()
                .find(|(k, _)| k == "class")
                .unwrap()
                .1
        };
        let (mut intra, mut cross) = ((0.0, 0usize), (0.0, 0usize));
        for i in 0..records.len() {
            for j in i + 1..records.len() {
                let d = distance(&records[i].features, &records[j].features).unwrap();
                if class(i) == class(j) {
                    intra = (intra.0 + d, intra.1 + 1);
                } else {
                    cross = (cross.0 + d, cross.1 + 1);
                }
            }
        }
        let mean_intra = intra.0 / intra.1 as f64;
        let mean_cross = cross.0 / cross.1 as f64;
        assert!(
            mean_cross >= 2.0 * mean_intra,
            "separation too weak: intra {mean_intra:.4}, cross {mean_cross:.4}"
        );
    }

    #[test]
    fn leave_one_out_curves_on_a_tiny_corpus() {
        let dir = tempfile::tempdir().unwrap();
        gen_corpus(dir.path(), 3, 3, 128, 11).unwrap();
        let idx = build_index(dir.path(), &Config::default(), false)
            .unwrap()
            .index;
        let curves = class_retrieval_curves(&idx).unwrap();
        assert_eq!(curves.len(), 9);
        for curve in &curves {
            assert_eq!(curve.len(), 8); // everything but the query itself
            assert_eq!(curve.last().unwrap().recall, 1.0);
            // separation is strong enough that both neighbors lead
            assert_eq!(curve[1].precision, 1.0);
        }
        let mean = mean_pr(&curves);
        assert_eq!(mean.len(), 8);
        assert!(mean[1].precision > 0.9);
    }
}
