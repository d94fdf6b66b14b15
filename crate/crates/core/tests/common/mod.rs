//! Independent straight-line re-implementations used as test oracles.
#![allow(dead_code)]

use rlde_afl::ndcore::Rng;

/// Frozen generation inputs for the DE oracle.
pub struct DeSnapshot<'a> {
    pub pos: &'a [Vec<f64>],
    pub fit: &'a [f64],
    pub union: Vec<Vec<f64>>,
    pub recent: Vec<Vec<f64>>,
    pub former: Vec<Vec<f64>>,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

/// (mutation index 1..=14, crossover index 1..=3, mutation params, crossover params)
pub type OracleAction = (usize, usize, [f64; 3], [f64; 2]);

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        s += (a[j] - b[j]) * (a[j] - b[j]);
    }
    s.sqrt()
}

fn plain_donors(n: usize, i: usize, taken: &[usize], count: usize, rng: &mut Rng) -> Vec<usize> {
    let skip_self = n - 1 >= taken.len() + count;
    let mut out = Vec::new();
    while out.len() < count {
        let r = rng.index(n);
        if skip_self && r == i {
            continue;
        }
        if taken.contains(&r) || out.contains(&r) {
            continue;
        }
        out.push(r);
    }
    out
}

fn from_union(
    pos: &[Vec<f64>],
    arch: &[Vec<f64>],
    i: usize,
    r1: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let n = pos.len();
    loop {
        let r = rng.index(n + arch.len());
        if r >= n {
            return arch[r - n].clone();
        }
        if r != i && r != r1 {
            return pos[r].clone();
        }
    }
}

/// Trial vectors for one generation, written out formula by formula.
pub fn de_trials(s: &DeSnapshot, actions: &[OracleAction], rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = s.pos.len();
    let d = s.pos[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| s.fit[*a].partial_cmp(&s.fit[*b]).unwrap().then(a.cmp(b)));
    let best = s.pos[order[0]].clone();
    let top = |p: f64| -> usize {
        let k = (p * n as f64).round() as usize;
        k.max(1).min(n)
    };
    let mut trials = Vec::new();
    for i in 0..n {
        let (mop, cop, mp, cp) = actions[i];
        let f = mp[0];
        let f2 = mp[1];
        let x = &s.pos[i];
        let mut u = vec![0.0; d];
        match mop {
            1 => {
                let r = plain_donors(n, i, &[], 3, rng);
                for j in 0..d {
                    u[j] = s.pos[r[0]][j] + f * (s.pos[r[1]][j] - s.pos[r[2]][j]);
                }
            }
            2 => {
                let r = plain_donors(n, i, &[], 2, rng);
                for j in 0..d {
                    u[j] = best[j] + f * (s.pos[r[0]][j] - s.pos[r[1]][j]);
                }
            }
            3 => {
                let r = plain_donors(n, i, &[], 5, rng);
                for j in 0..d {
                    u[j] = s.pos[r[0]][j]
                        + f * (s.pos[r[1]][j] - s.pos[r[2]][j])
                        + f * (s.pos[r[3]][j] - s.pos[r[4]][j]);
                }
            }
            4 => {
                let r = plain_donors(n, i, &[], 4, rng);
                for j in 0..d {
                    u[j] = best[j]
                        + f * (s.pos[r[0]][j] - s.pos[r[1]][j])
                        + f * (s.pos[r[2]][j] - s.pos[r[3]][j]);
                }
            }
            5 => {
                let r = plain_donors(n, i, &[], 3, rng);
                for j in 0..d {
                    u[j] = x[j] + f * (s.pos[r[0]][j] - x[j]) + f * (s.pos[r[1]][j] - s.pos[r[2]][j]);
                }
            }
            6 => {
                let r = plain_donors(n, i, &[], 2, rng);
                for j in 0..d {
                    u[j] = x[j] + f * (best[j] - x[j]) + f * (s.pos[r[0]][j] - s.pos[r[1]][j]);
                }
            }
            7 => {
                let r = plain_donors(n, i, &[], 4, rng);
                for j in 0..d {
                    u[j] = s.pos[r[0]][j]
                        + f * (best[j] - s.pos[r[1]][j])
                        + f * (s.pos[r[2]][j] - s.pos[r[3]][j]);
                }
            }
            8 => {
                let pb = s.pos[order[rng.index(top(mp[2]))]].clone();
                let r = plain_donors(n, i, &[], 2, rng);
                for j in 0..d {
                    u[j] = x[j] + f * (pb[j] - x[j]) + f * (s.pos[r[0]][j] - s.pos[r[1]][j]);
                }
            }
            9 => {
                let pb = s.pos[order[rng.index(top(mp[2]))]].clone();
                let r1 = plain_donors(n, i, &[], 1, rng)[0];
                let xt = from_union(s.pos, &s.union, i, r1, rng);
                for j in 0..d {
                    u[j] = x[j] + f * (pb[j] - x[j]) + f * (s.pos[r1][j] - xt[j]);
                }
            }
            10 => {
                let r1 = plain_donors(n, i, &[], 1, rng)[0];
                let xt = from_union(s.pos, &s.union, i, r1, rng);
                for j in 0..d {
                    u[j] = x[j] + f * (s.pos[r1][j] - xt[j]);
                }
            }
            11 => {
                let pb = s.pos[order[rng.index(top(mp[2]))]].clone();
                let r = plain_donors(n, i, &[], 2, rng);
                for j in 0..d {
                    u[j] = f * s.pos[r[0]][j] + f * f2 * (pb[j] - s.pos[r[1]][j]);
                }
            }
            12 => {
                let mut w: Vec<f64> = (0..n)
                    .map(|k| if k == i { 0.0 } else { 1.0 / (dist(x, &s.pos[k]) + 1e-12) })
                    .collect();
                let mut r = Vec::new();
                for _ in 0..3 {
                    let k = rng.weighted_index(&w);
                    w[k] = 0.0;
                    r.push(k);
                }
                for j in 0..d {
                    u[j] = s.pos[r[0]][j] + f * (s.pos[r[1]][j] - s.pos[r[2]][j]);
                }
            }
            13 => {
                let pb = s.pos[order[rng.index(top(mp[2]))]].clone();
                let r1 = plain_donors(n, i, &[], 1, rng)[0];
                let x2 = from_union(s.pos, &s.recent, i, r1, rng);
                let x3 = from_union(s.pos, &s.former, i, r1, rng);
                for j in 0..d {
                    u[j] = x[j]
                        + f * (pb[j] - x[j])
                        + f2 * (s.pos[r1][j] - x2[j])
                        + f2 * (s.pos[r1][j] - x3[j]);
                }
            }
            14 => {
                let mut near: Vec<(f64, usize)> =
                    (0..n).filter(|k| *k != i).map(|k| (dist(x, &s.pos[k]), k)).collect();
                near.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = std::cmp::max(2, n / 10);
                let mut nb = near[0].1;
                for &(_, k) in &near[..m] {
                    if s.fit[k] < s.fit[nb] {
                        nb = k;
                    }
                }
                let r = plain_donors(n, i, &[nb], 2, rng);
                for j in 0..d {
                    u[j] = s.pos[nb][j] + f * (s.pos[r[0]][j] - s.pos[r[1]][j]);
                }
            }
            _ => panic!("bad operator"),
        }
        let cr = cp[0];
        let mut v;
        match cop {
            1 | 3 => {
                let base = if cop == 3 {
                    s.pos[order[rng.index(top(cp[1]))]].clone()
                } else {
                    x.clone()
                };
                let jr = rng.index(d);
                v = base.clone();
                for j in 0..d {
                    if rng.uniform() < cr || j == jr {
                        v[j] = u[j];
                    }
                }
            }
            2 => {
                v = x.clone();
                let start = rng.index(d);
                let mut len = 1;
                while len < d && rng.uniform() < cr {
                    len += 1;
                }
                for k in 0..len {
                    v[(start + k) % d] = u[(start + k) % d];
                }
            }
            _ => panic!("bad crossover"),
        }
        for j in 0..d {
            if v[j] > s.upper[j] {
                v[j] = (x[j] + s.upper[j]) / 2.0;
            }
            if v[j] < s.lower[j] {
                v[j] = (x[j] + s.lower[j]) / 2.0;
            }
        }
        trials.push(v);
    }
    trials
}

/// Truncated geometric law of the exponential-crossover segment length:
/// returns `(mean, variance)`.
pub fn exponential_length_moments(d: usize, cr: f64) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for l in 1..=d {
        let p = if l < d {
            cr.powi(l as i32 - 1) * (1.0 - cr)
        } else {
            cr.powi(d as i32 - 1)
        };
        m1 += l as f64 * p;
        m2 += (l * l) as f64 * p;
    }
    (m1, m2 - m1 * m1)
}

pub mod net {
    //! Plain nested-vector forward pass of the policy network.
    use rlde_afl::policy::PolicyWeights;

    pub type Mat = Vec<Vec<f64>>;

    fn param<'a>(w: &'a PolicyWeights, name: &str) -> &'a [f64] {
        w.get(name).unwrap_or_else(|| panic!("{name}")).data()
    }

    pub fn dense(w: &PolicyWeights, name: &str, x: &Mat) -> Mat {
        let wt = param(w, &format!("{name}.w"));
        let b = param(w, &format!("{name}.b"));
        let out = b.len();
        let inp = wt.len() / out;
        x.iter()
            .map(|row| {
                assert_eq!(row.len(), inp);
                (0..out)
                    .map(|o| {
                        let mut s = b[o];
                        for p in 0..inp {
                            s += row[p] * wt[p * out + o];
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    fn norm(w: &PolicyWeights, name: &str, x: &Mat) -> Mat {
        let g = param(w, &format!("{name}.gain"));
        let s = param(w, &format!("{name}.shift"));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = (var + 1e-5).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(c, v)| (v - mean) / sd * g[c] + s[c])
                    .collect()
            })
            .collect()
    }

    fn add(a: &Mat, b: &Mat) -> Mat {
        a.iter()
            .zip(b)
            .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
            .collect()
    }

    /// Self-attention among the rows of `x` (tokens × 64).
    fn attend(w: &PolicyWeights, block: &str, x: &Mat, heads: usize) -> Mat {
        let q = dense(w, &format!("{block}.attn.q"), x);
        let k = dense(w, &format!("{block}.attn.k"), x);
        let v = dense(w, &format!("{block}.attn.v"), x);
        let l = x.len();
        let width = 64 / heads;
        let mut out = vec![vec![0.0; 64]; l];
        for h in 0..heads {
            let cols = h * width..(h + 1) * width;
            for i in 0..l {
                let scores: Vec<f64> = (0..l)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (width as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..l {
                    for c in cols.clone() {
                        out[i][c] += e[j] / z * v[j][c];
                    }
                }
            }
        }
        dense(w, &format!("{block}.attn.o"), &out)
    }

    fn block(w: &PolicyWeights, name: &str, x: &Mat, heads: usize, mlp: bool) -> Mat {
        let mixed = if mlp {
            dense(w, &format!("{name}.mix"), x)
        } else {
            attend(w, name, x, heads)
        };
        let hat = norm(w, &format!("{name}.ln1"), &add(&mixed, x));
        let f = dense(w, &format!("{name}.ffn"), &hat);
        norm(w, &format!("{name}.ln2"), &add(&f, &hat))
    }

    /// `(features N×64, mutation probabilities N×14, per-individual values)`.
    pub fn forward(
        w: &PolicyWeights,
        tuples: &[f64],
        d: usize,
        n: usize,
        time: Option<f64>,
    ) -> (Mat, Mat, Vec<f64>) {
        let cfg = w.config();
        // h[j][i] : 64 channels of individual i at dimension j
        let mut h: Vec<Mat> = (0..d)
            .map(|j| {
                let toks: Mat = (0..n)
                    .map(|i| tuples[(j * n + i) * 3..(j * n + i) * 3 + 3].to_vec())
                    .collect();
                dense(w, "embed", &toks)
            })
            .collect();
        for j in 0..d {
            h[j] = block(w, "solution", &h[j], cfg.heads, cfg.mlp_extractor);
        }
        let mut feats = Vec::new();
        for i in 0..n {
            let mut toks: Mat = (0..d).map(|j| h[j][i].clone()).collect();
            for (j, tok) in toks.iter_mut().enumerate() {
                for c in 0..64 {
                    let freq = 1.0 / 10_000f64.powf((c - c % 2) as f64 / 64.0);
                    let a = j as f64 * freq;
                    tok[c] += if c % 2 == 0 { a.sin() } else { a.cos() };
                }
            }
            let out = block(w, "dimension", &toks, cfg.heads, cfg.mlp_extractor);
            let pooled: Vec<f64> = (0..64)
                .map(|c| out.iter().map(|r| r[c]).sum::<f64>() / d as f64)
                .collect();
            feats.push(pooled);
        }
        let e_time = match time {
            Some(t) => dense(w, "time", &vec![vec![t]])[0].clone(),
            None => vec![0.0; 16],
        };
        let dv: Mat = feats
            .iter()
            .map(|f| f.iter().chain(&e_time).copied().collect())
            .collect();
        let relu = |m: Mat| -> Mat { m.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect() };
        let logits = dense(w, "mutation.out", &relu(dense(w, "mutation.hidden", &dv)));
        let probs: Mat = logits
            .iter()
            .map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            })
            .collect();
        let c = relu(dense(w, "critic.l1", &dv));
        let c = relu(dense(w, "critic.l2", &c));
        let values = dense(w, "critic.out", &c).into_iter().map(|r| r[0]).collect();
        (feats, probs, values)
    }
}
