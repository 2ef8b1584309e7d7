//! Banded LDL' factorization of symmetric quasi-definite systems with a
//! reverse Cuthill-McKee fill-reducing ordering.
//!
//! The interior-point KKT systems here are block-banded once variables and
//! equality duals are interleaved; RCM recovers that interleaving from the
//! sparsity pattern alone, so the same code path serves both the structured
//! MPC problems (narrow band) and small dense test problems (full band).

/// Symmetric adjacency for ordering purposes.
pub struct AdjacencyGraph {
    pub n: usize,
    neighbors: Vec<Vec<u32>>,
}

impl AdjacencyGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        self.neighbors[i].push(j as u32);
        self.neighbors[j].push(i as u32);
    }

    fn dedup(&mut self) {
        for adj in &mut self.neighbors {
            adj.sort_unstable();
            adj.dedup();
        }
    }

    /// Reverse Cuthill-McKee ordering. Returns `perm` with
    /// `perm[new_index] = old_index`. Deterministic: ties break on index.
    pub fn reverse_cuthill_mckee(mut self) -> Vec<usize> {
        self.dedup();
        let n = self.n;
        let degree: Vec<usize> = self.neighbors.iter().map(|a| a.len()).collect();
        let mut visited = vec![false; n];
        let mut order: Vec<usize> = Vec::with_capacity(n);
        // Process components from lowest-degree unvisited seeds.
        let mut seeds: Vec<usize> = (0..n).collect();
        seeds.sort_by_key(|&i| (degree[i], i));
        for &seed in &seeds {
            if visited[seed] {
                continue;
            }
            visited[seed] = true;
            let mut queue = std::collections::VecDeque::new();
            queue.push_back(seed);
            order.push(seed);
            while let Some(u) = queue.pop_front() {
                let mut next: Vec<usize> = self.neighbors[u]
                    .iter()
                    .map(|&v| v as usize)
                    .filter(|&v| !visited[v])
                    .collect();
                next.sort_by_key(|&v| (degree[v], v));
                for v in next {
                    if !visited[v] {
                        visited[v] = true;
                        order.push(v);
                        queue.push_back(v);
                    }
                }
            }
        }
        order.reverse();
        order
    }
}

/// Lower-banded storage of a symmetric matrix and its in-place LDL'
/// factorization. Row `i` holds entries for columns `[i-bw, i]`.
pub struct BandedLdl {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>,
    diag: Vec<f64>,
    factored: bool,
}

impl BandedLdl {
    pub fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
            diag: vec![0.0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    /// Accumulate into entry `(i, j)` of the lower triangle (callers pass
    /// `i >= j`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    /// In-place LDL' without pivoting. Quasi-definite inputs (positive
    /// primal block, negative regularized dual block) admit this stably.
    /// Returns false if a zero pivot is hit.
    pub fn factor(&mut self) -> bool {
        let bw = self.bw;
        for j in 0..self.n {
            let lo = j.saturating_sub(bw);
            let mut d = self.data[self.idx(j, j)];
            for k in lo..j {
                let l_jk = self.data[self.idx(j, k)];
                d -= l_jk * l_jk * self.diag[k];
            }
            if d == 0.0 || !d.is_finite() {
                return false;
            }
            self.diag[j] = d;
            let hi = (j + bw).min(self.n - 1);
            for i in j + 1..=hi {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut v = self.data[self.idx(i, j)];
                for k in lo_i..j {
                    v -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)] * self.diag[k];
                }
                let at = self.idx(i, j);
                self.data[at] = v / d;
            }
        }
        self.factored = true;
        true
    }

    /// Solve `K x = rhs` in place using the stored factorization.
    pub fn solve(&self, rhs: &mut [f64]) {
        debug_assert!(self.factored);
        let bw = self.bw;
        // Forward: L y = rhs
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let mut v = rhs[i];
            for k in lo..i {
                v -= self.data[self.idx(i, k)] * rhs[k];
            }
            rhs[i] = v;
        }
        // Diagonal
        for i in 0..self.n {
            rhs[i] /= self.diag[i];
        }
        // Backward: L' x = y
        for i in (0..self.n).rev() {
            let hi = (i + bw).min(self.n - 1);
            let mut v = rhs[i];
            for k in i + 1..=hi {
                v -= self.data[self.idx(k, i)] * rhs[k];
            }
            rhs[i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rcm_reduces_bandwidth_of_a_chain() {
        // A chain graph numbered badly: RCM should give bandwidth 1.
        let n = 10;
        let shuffled: Vec<usize> = vec![3, 7, 1, 9, 0, 4, 8, 2, 6, 5];
        let mut g = AdjacencyGraph::new(n);
        for w in shuffled.windows(2) {
            g.add_edge(w[0], w[1]);
        }
        let perm = g.reverse_cuthill_mckee();
        let mut pos = vec![0; n];
        for (p, &old) in perm.iter().enumerate() {
            pos[old] = p;
        }
        let bw = shuffled
            .windows(2)
            .map(|w| pos[w[0]].abs_diff(pos[w[1]]))
            .max()
            .unwrap();
        assert_eq!(bw, 1);
    }

    #[test]
    fn banded_ldl_solves_quasi_definite_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let n = 12 + trial % 5;
            let bw = n - 1; // dense band
            // Quasi-definite: [P A'; A -Q] with P, Q SPD.
            let np = n / 2;
            let mut k = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    if i < np && j < np || i >= np && j >= np {
                        if i == j {
                            k[(i, j)] = if i < np { 5.0 + v } else { -5.0 + v.min(0.0) };
                        } else if i < np {
                            k[(i, j)] = 0.3 * v;
                            k[(j, i)] = 0.3 * v;
                        } else {
                            // keep dual block diagonal for quasi-definiteness
                        }
                    } else {
                        k[(i, j)] = v;
                        k[(j, i)] = v;
                    }
                }
            }
            let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let rhs_vec = &k * DMatrix::from_column_slice(n, 1, &x_true);

            let mut ldl = BandedLdl::new(n, bw);
            for i in 0..n {
                for j in 0..=i {
                    if k[(i, j)] != 0.0 {
                        ldl.add(i, j, k[(i, j)]);
                    }
                }
            }
            assert!(ldl.factor());
            let mut sol: Vec<f64> = rhs_vec.iter().cloned().collect();
            ldl.solve(&mut sol);
            for (a, b) in sol.iter().zip(&x_true) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }
}
