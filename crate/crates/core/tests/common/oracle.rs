//! Reference implementations written straight from the definitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simsr_core::encoder::{featurize, symmetric_loss, EncoderModel, Features, DEFAULT_HASH_SEED};
use simsr_core::simulation::SimilarityMatrix;
use simsr_core::{CandidatePool, Embedding};

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (SimilarityMatrix, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
    let z: f64 = raw.iter().sum();
    (
        SimilarityMatrix::from_rows(&rows).unwrap(),
        raw.into_iter().map(|x| x / z).collect(),
    )
}

/// Value of a set written out from the definition.
pub fn oracle_value(c: &SimilarityMatrix, p: &[f64], set: &[usize]) -> f64 {
    let mut total = 0.0;
    for (m, pm) in p.iter().enumerate() {
        let mut best = 0.0f64;
        for &i in set {
            best = best.max(c.get(i, m));
        }
        total += pm * best;
    }
    total
}

/// Argmax over every k-subset via bitmasks, ties to the lexicographically
/// smallest sorted tuple.
pub fn brute_force(c: &SimilarityMatrix, p: &[f64], k: usize) -> (Vec<usize>, f64) {
    let n = c.rows();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let v = oracle_value(c, p, &set);
        let replace = match &best {
            None => true,
            Some((bs, bv)) => v > *bv || (v == *bv && set < *bs),
        };
        if replace {
            best = Some((set, v));
        }
    }
    best.unwrap()
}

/// Algorithm-as-written ablative search with direct evaluation of every
/// leave-one-out subset.
pub fn naive_ablative(c: &SimilarityMatrix, p: &[f64], k: usize) -> (Vec<usize>, u64) {
    let mut cur: Vec<usize> = (0..c.rows()).collect();
    let mut count = 0;
    while cur.len() > k {
        let mut best: Option<(Vec<usize>, f64, usize)> = None;
        for l in 0..cur.len() {
            let mut sub = cur.clone();
            sub.remove(l);
            count += 1;
            let v = oracle_value(c, p, &sub);
            let replace = match &best {
                None => true,
                Some((bs, bv, _)) => v > *bv || (v == *bv && sub < *bs),
            };
            if replace {
                best = Some((sub, v, l));
            }
        }
        cur.remove(best.unwrap().2);
    }
    (cur, count)
}

pub fn naive_greedy(c: &SimilarityMatrix, p: &[f64], k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for r in 0..c.rows() {
            if chosen.contains(&r) {
                continue;
            }
            let mut s = chosen.clone();
            s.push(r);
            s.sort();
            let v = oracle_value(c, p, &s);
            let replace = match &best {
                None => true,
                Some((bs, bv)) => v > *bv || (v == *bv && s < *bs),
            };
            if replace {
                best = Some((s, v));
            }
        }
        chosen = best.unwrap().0;
    }
    chosen
}

/// Independent f64 re-derivation of the symmetric loss over dense weights.
pub fn oracle_loss(w: &[f64], dim: usize, batch: &[(Features, Features)]) -> f64 {
    let embed = |f: &Features| {
        let mut v = vec![0.0; dim];
        for &(b, x) in f.entries() {
            for k in 0..dim {
                v[k] += x as f64 * w[b * dim + k];
            }
        }
        v
    };
    let xs: Vec<Vec<f64>> = batch.iter().map(|(x, _)| embed(x)).collect();
    let ys: Vec<Vec<f64>> = batch.iter().map(|(_, y)| embed(y)).collect();
    let g = |i: usize, j: usize| xs[i].iter().zip(&ys[j]).map(|(a, b)| a * b).sum::<f64>();
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let num = g(i, i).exp();
        let row: f64 = (0..n).map(|j| g(i, j).exp()).sum();
        let col: f64 = (0..n).map(|j| g(j, i).exp()).sum();
        total -= (num / (row + col - num)).ln();
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    /// Largest |library loss − oracle loss|.
    pub loss_error: f64,
    /// Largest relative error over coordinates with a non-negligible gradient.
    pub worst_relative: f64,
    /// Largest absolute error over the remaining coordinates.
    pub worst_absolute_near_zero: f64,
}

/// Analytic gradient against central differences of [`oracle_loss`] on
/// `batches` random batches of 1 to 3 pairs.
pub fn gradient_check(batches: u64, seed: u64) -> GradientCheck {
    let vocab = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradientCheck::default();
    for trial in 0..batches {
        let buckets = 16;
        let dim = 3;
        let model = EncoderModel::random(buckets, dim, DEFAULT_HASH_SEED, seed ^ trial, 0.4).unwrap();
        let size = rng.random_range(1..=3);
        let phrase = |rng: &mut ChaCha8Rng| {
            (0..rng.random_range(1..=3))
                .map(|_| vocab[rng.random_range(0..vocab.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let pairs: Vec<(String, String)> = (0..size).map(|_| (phrase(&mut rng), phrase(&mut rng))).collect();
        let (loss, grad) = symmetric_loss(&model, &pairs).unwrap();
        let feats: Vec<(Features, Features)> = pairs
            .iter()
            .map(|(x, y)| {
                (
                    featurize(x, buckets, DEFAULT_HASH_SEED),
                    featurize(y, buckets, DEFAULT_HASH_SEED),
                )
            })
            .collect();
        let w: Vec<f64> = model.weights().iter().map(|&x| x as f64).collect();
        out.loss_error = out.loss_error.max((oracle_loss(&w, dim, &feats) - loss).abs());

        let h = 1e-5;
        for idx in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[idx] += h;
            wm[idx] -= h;
            let fd = (oracle_loss(&wp, dim, &feats) - oracle_loss(&wm, dim, &feats)) / (2.0 * h);
            let an = grad.get(idx / dim, idx % dim);
            let scale = fd.abs().max(an.abs());
            if scale > 1e-6 {
                out.worst_relative = out.worst_relative.max((fd - an).abs() / scale);
            } else {
                out.worst_absolute_near_zero = out.worst_absolute_near_zero.max((fd - an).abs());
            }
        }
    }
    out
}

/// Ids of the `n` best rows by a plain f64 scan, ties to the lower id.
pub fn naive_top_n(matrix: &[f32], dim: usize, query: &[f32], n: usize) -> Vec<usize> {
    let mut scan: Vec<(usize, f64)> = matrix
        .chunks(dim)
        .enumerate()
        .map(|(i, row)| {
            let mut s = 0.0f64;
            for k in 0..dim {
                s += row[k] as f64 * query[k] as f64;
            }
            (i, s)
        })
        .collect();
    scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scan.into_iter().take(n).map(|x| x.0).collect()
}

/// Shortlists of `pools` random pools against [`naive_top_n`], plus the
/// shape of the simulation distribution.
pub fn check_retrieval(pools: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..pools {
        let r = rng.random_range(1..200);
        let d = rng.random_range(1..12);
        // coarse values force score ties, including -0.0 against 0.0
        let matrix: Vec<f32> = (0..r * d).map(|_| rng.random_range(-3..=3) as f32 * 0.5).collect();
        let texts = (0..r).map(|i| format!("c{i}")).collect();
        let pool = CandidatePool::from_embeddings(texts, matrix.clone(), d, 0).unwrap();
        let q = Embedding((0..d).map(|_| rng.random_range(-2..=2) as f32).collect());
        let n = rng.random_range(1..=r);
        let m = rng.random_range(1..=r);
        let (short, sim) = pool.retrieve_embedding(&q, n, m, 10.0).unwrap();
        let got: Vec<usize> = short.ids().collect();
        if got != naive_top_n(&matrix, d, &q.0, n) {
            return Err(format!("pool {t}: shortlist differs from full scan"));
        }
        let probs = sim.probabilities();
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() >= 1e-6 {
            return Err(format!("pool {t}: probabilities sum to {total}"));
        }
        if !probs.windows(2).all(|w| w[0] >= w[1]) || !probs.iter().all(|&x| x > 0.0) {
            return Err(format!("pool {t}: probabilities not positive and ordered"));
        }
    }
    Ok(())
}
