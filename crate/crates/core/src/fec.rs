//! Quasi-cyclic LDPC coding: the IEEE 802.11 n = 648, rate-3/4 code, a
//! flooding sum-product decoder and frame-error bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{NliError, Result};

const IEEE80211_N648_R34: &str = include_str!("../data/ieee80211_n648_r34.txt");

/// Binary parity-check code built from a lifted prototype matrix.
#[derive(Clone, Debug)]
pub struct LdpcCode {
    z: usize,
    base: Vec<Vec<i32>>,
    n: usize,
    k: usize,
    // Tanner graph, edges grouped by check
    edge_var: Vec<usize>,
    check_start: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
}

impl LdpcCode {
    /// The 802.11 code with 486 information bits per 648-bit codeword.
    pub fn ieee80211_n648_r34() -> Self {
        Self::from_prototype_text(IEEE80211_N648_R34).expect("bundled prototype matrix is valid")
    }

    /// Parses the prototype format documented in `data/ieee80211_n648_r34.txt`.
    pub fn from_prototype_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| NliError::Format("empty prototype file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| NliError::Format(format!("bad header token `{t}`"))))
            .collect::<Result<_>>()?;
        let [rows, cols, z] = dims[..] else {
            return Err(NliError::Format(format!("header must be `rows cols z`, got `{header}`")));
        };
        let mut base = Vec::with_capacity(rows);
        for line in lines {
            let row: Vec<i32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| NliError::Format(format!("bad entry `{t}`"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(NliError::Format(format!("row has {} entries, expected {cols}", row.len())));
            }
            if row.iter().any(|&s| s < -1 || s >= z as i32) {
                return Err(NliError::Format(format!("shift out of range in row `{line}`")));
            }
            base.push(row);
        }
        if base.len() != rows {
            return Err(NliError::Format(format!("found {} rows, header says {rows}", base.len())));
        }
        Self::from_base(base, z)
    }

    fn from_base(base: Vec<Vec<i32>>, z: usize) -> Result<Self> {
        let mb = base.len();
        let nb = base[0].len();
        if nb <= mb {
            return Err(NliError::Format("prototype needs more columns than rows".into()));
        }
        check_dual_diagonal(&base)?;
        let n = nb * z;
        let mut edge_var = Vec::new();
        let mut check_start = vec![0];
        for row in &base {
            for r in 0..z {
                for (j, &s) in row.iter().enumerate() {
                    if s >= 0 {
                        edge_var.push(j * z + (r + s as usize) % z);
                    }
                }
                check_start.push(edge_var.len());
            }
        }
        let mut var_edges = vec![Vec::new(); n];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[v].push(e);
        }
        Ok(LdpcCode {
            z,
            k: (nb - mb) * z,
            base,
            n,
            edge_var,
            check_start,
            var_edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_checks(&self) -> usize {
        self.check_start.len() - 1
    }

    fn check_vars(&self, c: usize) -> &[usize] {
        &self.edge_var[self.check_start[c]..self.check_start[c + 1]]
    }

    /// True when every parity check is satisfied.
    pub fn is_codeword(&self, bits: &[u8]) -> bool {
        bits.len() == self.n && (0..self.num_checks()).all(|c| self.check_vars(c).iter().fold(0u8, |acc, &v| acc ^ bits[v]) == 0)
    }

    /// Systematic encoding [info | parity] by back-substitution along the dual diagonal.
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k {
            return Err(NliError::InputShape(format!("expected {} information bits, got {}", self.k, info.len())));
        }
        let z = self.z;
        let mb = self.base.len();
        let kb = self.base[0].len() - mb;
        // λ_i = Σ_j P^{s_ij} u_j
        let lambda: Vec<Vec<u8>> = self
            .base
            .iter()
            .map(|row| {
                let mut acc = vec![0u8; z];
                for (j, &s) in row[..kb].iter().enumerate() {
                    if s >= 0 {
                        xor_shifted(&mut acc, &info[j * z..(j + 1) * z], s as usize);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0u8; z];
        for l in &lambda {
            xor_into(&mut total, l);
        }
        // Summing all rows leaves P^{s_x} p0, where s_x is the unpaired shift of the first parity column.
        let sx = unpaired_shift(&self.base, kb);
        let mut p0 = vec![0u8; z];
        xor_shifted(&mut p0, &total, (z - sx) % z);

        let mut parity = vec![p0];
        for i in 0..mb - 1 {
            let mut next = lambda[i].clone();
            let s = self.base[i][kb];
            if s >= 0 {
                xor_shifted(&mut next, &parity[0], s as usize);
            }
            if i > 0 {
                xor_into(&mut next, &parity[i]);
            }
            parity.push(next);
        }
        let mut cw = info.to_vec();
        for p in parity {
            cw.extend(p);
        }
        Ok(cw)
    }

    /// Flooding sum-product decoding with the exact tanh rule.
    ///
    /// LLRs are ln P(b = 0)/P(b = 1). Stops as soon as the hard decision
    /// satisfies every check.
    pub fn decode(&self, llrs: &[f64], max_iter: usize) -> Result<DecodeOutcome> {
        if llrs.len() != self.n {
            return Err(NliError::InputShape(format!("expected {} LLRs, got {}", self.n, llrs.len())));
        }
        const TANH_MAX: f64 = 1.0 - 1e-15;
        let ne = self.edge_var.len();
        let mut q: Vec<f64> = self.edge_var.iter().map(|&v| llrs[v]).collect();
        let mut r = vec![0.0f64; ne];
        let mut t = vec![0.0f64; ne];
        let mut hard = vec![0u8; self.n];
        let mut fwd = Vec::new();
        for it in 1..=max_iter {
            for c in 0..self.num_checks() {
                let (s, e) = (self.check_start[c], self.check_start[c + 1]);
                for i in s..e {
                    t[i] = (0.5 * q[i]).tanh();
                }
                // exclusive products via prefix/suffix sweeps
                fwd.clear();
                let mut acc = 1.0;
                for &ti in &t[s..e] {
                    fwd.push(acc);
                    acc *= ti;
                }
                let mut back = 1.0;
                for i in (s..e).rev() {
                    let p = (fwd[i - s] * back).clamp(-TANH_MAX, TANH_MAX);
                    r[i] = 2.0 * p.atanh();
                    back *= t[i];
                }
            }
            for (v, edges) in self.var_edges.iter().enumerate() {
                let total = llrs[v] + edges.iter().map(|&e| r[e]).sum::<f64>();
                for &e in edges {
                    q[e] = total - r[e];
                }
                hard[v] = (total < 0.0) as u8;
            }
            if self.is_codeword(&hard) {
                return Ok(self.outcome(hard, true, it));
            }
        }
        Ok(self.outcome(hard, false, max_iter))
    }

    fn outcome(&self, codeword: Vec<u8>, converged: bool, iterations: usize) -> DecodeOutcome {
        DecodeOutcome {
            info: codeword[..self.k].to_vec(),
            codeword,
            converged,
            iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutcome {
    pub info: Vec<u8>,
    pub codeword: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

fn xor_into(acc: &mut [u8], x: &[u8]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a ^= b);
}

/// acc ^= P^s x, where (P^s x)[r] = x[(r + s) mod z].
fn xor_shifted(acc: &mut [u8], x: &[u8], s: usize) {
    let z = x.len();
    for (r, a) in acc.iter_mut().enumerate() {
        *a ^= x[(r + s) % z];
    }
}

fn unpaired_shift(base: &[Vec<i32>], kb: usize) -> usize {
    let shifts: Vec<i32> = base.iter().map(|r| r[kb]).filter(|&s| s >= 0).collect();
    shifts
        .iter()
        .copied()
        .find(|s| shifts.iter().filter(|t| *t == s).count() == 1)
        .expect("validated by check_dual_diagonal") as usize
}

/// The encoder needs parity columns [h | dual diagonal]: the first parity column
/// has three nonzero blocks, two of them with equal shifts in the first and last row.
fn check_dual_diagonal(base: &[Vec<i32>]) -> Result<()> {
    let mb = base.len();
    let kb = base[0].len() - mb;
    let first: Vec<(usize, i32)> = base.iter().enumerate().map(|(i, r)| (i, r[kb])).filter(|(_, s)| *s >= 0).collect();
    let ok_first = first.len() == 3 && first[0].0 == 0 && first[2].0 == mb - 1 && first[0].1 == first[2].1 && first[1].1 != first[0].1;
    let ok_diag = (0..mb).all(|i| {
        (1..mb).all(|j| {
            let expect = if j == i || j == i + 1 { 0 } else { -1 };
            base[i][kb + j] == expect
        })
    });
    if ok_first && ok_diag {
        Ok(())
    } else {
        Err(NliError::Format("parity part is not in dual-diagonal form".into()))
    }
}

/// Frame error rate with a 95 % Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FerEstimate {
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub frames: usize,
    pub errors: usize,
}

pub fn wilson_interval(errors: usize, frames: usize) -> (f64, f64) {
    const Z: f64 = 1.959_963_984_540_054;
    let n = frames as f64;
    let p = errors as f64 / n;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if errors == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if errors == frames { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub fn fer_from_counts(errors: usize, frames: usize) -> Result<FerEstimate> {
    if frames == 0 {
        return Err(NliError::Input("no frames to count".into()));
    }
    let (ci_lo, ci_hi) = wilson_interval(errors, frames);
    Ok(FerEstimate {
        rate: errors as f64 / frames as f64,
        ci_lo,
        ci_hi,
        frames,
        errors,
    })
}

/// Fraction of frames whose decoded information differs from the truth in at least one bit.
pub fn frame_error_rate<'a>(results: impl IntoIterator<Item = (&'a [u8], &'a [u8])>) -> Result<FerEstimate> {
    let (mut frames, mut errors) = (0, 0);
    for (decoded, truth) in results {
        frames += 1;
        errors += (decoded != truth) as usize;
    }
    fer_from_counts(errors, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn code() -> LdpcCode {
        LdpcCode::ieee80211_n648_r34()
    }

    fn info(rng: &mut ChaCha20Rng, k: usize) -> Vec<u8> {
        (0..k).map(|_| rng.random_range(0..2u8)).collect()
    }

    fn confident(cw: &[u8]) -> Vec<f64> {
        cw.iter().map(|&b| if b == 0 { 50.0 } else { -50.0 }).collect()
    }

    #[test]
    fn dimensions() {
        let c = code();
        assert_eq!((c.n(), c.k(), c.num_checks()), (648, 486, 162));
    }

    #[test]
    fn parity_checks_hold_for_random_frames() {
        let c = code();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(c.encode(&vec![0; 486]).unwrap(), vec![0; 648]);
        for _ in 0..1000 {
            let u = info(&mut rng, 486);
            let cw = c.encode(&u).unwrap();
            assert!(c.is_codeword(&cw));
            assert_eq!(&cw[..486], &u[..]);
        }
    }

    #[test]
    fn encoder_is_linear() {
        let c = code();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (u, v) = (info(&mut rng, 486), info(&mut rng, 486));
        let uv: Vec<u8> = u.iter().zip(&v).map(|(a, b)| a ^ b).collect();
        let lhs = c.encode(&uv).unwrap();
        let rhs: Vec<u8> = c.encode(&u).unwrap().iter().zip(c.encode(&v).unwrap()).map(|(a, b)| a ^ b).collect();
        assert_eq!(lhs, rhs);
        assert!(matches!(c.encode(&u[..100]), Err(NliError::InputShape(_))));
    }

    #[test]
    fn rank_gives_486_information_bits() {
        // Gaussian elimination over GF(2): rank(H) = 162 so k = 648 − 162.
        let c = code();
        let mut rows: Vec<Vec<u64>> = (0..c.num_checks())
            .map(|ch| {
                let mut w = vec![0u64; 11];
                for &v in c.check_vars(ch) {
                    w[v / 64] |= 1 << (v % 64);
                }
                w
            })
            .collect();
        let mut rank = 0;
        for col in 0..648 {
            let (wi, bit) = (col / 64, 1u64 << (col % 64));
            if let Some(p) = (rank..rows.len()).find(|&r| rows[r][wi] & bit != 0) {
                rows.swap(rank, p);
                let pivot = rows[rank].clone();
                for (r, row) in rows.iter_mut().enumerate() {
                    if r != rank && row[wi] & bit != 0 {
                        row.iter_mut().zip(&pivot).for_each(|(a, b)| *a ^= b);
                    }
                }
                rank += 1;
            }
        }
        assert_eq!(648 - rank, 486);
    }

    #[test]
    fn noiseless_decode_in_one_iteration() {
        let c = code();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let u = info(&mut rng, 486);
        let cw = c.encode(&u).unwrap();
        let out = c.decode(&confident(&cw), 40).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.info, u);
        assert_eq!(out.codeword, cw);
    }

    #[test]
    fn corrects_single_flipped_llr() {
        let c = code();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for pos in [0usize, 100, 485, 486, 647] {
            let u = info(&mut rng, 486);
            let cw = c.encode(&u).unwrap();
            let mut l: Vec<f64> = cw.iter().map(|&b| if b == 0 { 8.0 } else { -8.0 }).collect();
            l[pos] = -l[pos] * 0.5;
            let out = c.decode(&l, 40).unwrap();
            assert!(out.converged);
            assert_eq!(out.info, u);
        }
    }

    #[test]
    fn decode_is_deterministic_and_idempotent() {
        let c = code();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cw = c.encode(&info(&mut rng, 486)).unwrap();
        let noisy: Vec<f64> = cw
            .iter()
            .map(|&b| {
                let n: f64 = StandardNormal.sample(&mut rng);
                (if b == 0 { 1.0 } else { -1.0 }) * 2.0 / 0.6 + n * 2.0 / 0.6f64.sqrt()
            })
            .collect();
        let a = c.decode(&noisy, 40).unwrap();
        let b = c.decode(&noisy, 40).unwrap();
        assert_eq!(a, b);
        let again = c.decode(&confident(&a.codeword), 40).unwrap();
        if a.converged {
            assert_eq!(again.codeword, a.codeword);
        }
        let valid = c.decode(&confident(&cw), 40).unwrap();
        assert_eq!(valid.codeword, cw);
    }

    #[test]
    fn rejects_malformed_prototypes() {
        assert!(LdpcCode::from_prototype_text("").is_err());
        assert!(LdpcCode::from_prototype_text("2 4 3\n0 0 0 -1\n").is_err());
        assert!(LdpcCode::from_prototype_text("1 3 3\n0 5 0\n").is_err());
        assert!(LdpcCode::decode(&code(), &[0.0; 10], 40).is_err());
    }

    #[test]
    fn fer_arithmetic() {
        let ok = vec![1u8, 0, 1];
        let bad = vec![1u8, 1, 1];
        let all_ok: Vec<(&[u8], &[u8])> = (0..10).map(|_| (&ok[..], &ok[..])).collect();
        assert_eq!(frame_error_rate(all_ok).unwrap().rate, 0.0);
        let all_bad: Vec<(&[u8], &[u8])> = (0..10).map(|_| (&bad[..], &ok[..])).collect();
        assert_eq!(frame_error_rate(all_bad).unwrap().rate, 1.0);
        let mixed: Vec<(&[u8], &[u8])> = (0..100).map(|i| (if i < 4 { &bad[..] } else { &ok[..] }, &ok[..])).collect();
        let f = frame_error_rate(mixed).unwrap();
        assert_eq!(f.rate, 0.04);
        assert!(f.ci_lo < 0.04 && f.ci_hi > 0.04);
        // Wilson interval for 4/100: [0.01566, 0.09837]
        assert!((f.ci_lo - 0.015_66).abs() < 1e-4 && (f.ci_hi - 0.098_37).abs() < 1e-4);
        assert!(frame_error_rate(std::iter::empty()).is_err());
        let (lo, hi) = wilson_interval(0, 2000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 2e-3);
    }
}
