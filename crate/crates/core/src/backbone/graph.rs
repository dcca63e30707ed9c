use crate::data::Dataset;
use crate::numerics::{Matrix, Real};

/// Symmetric normalized bipartite adjacency `D^{-1/2} A D^{-1/2}` over the
/// training interactions, stored as per-node neighbor lists. No self loops.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedGraph {
    user_adj: Vec<Vec<(u32, f64)>>,
    item_adj: Vec<Vec<(u32, f64)>>,
}

impl NormalizedGraph {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let pairs: Vec<(u32, u32)> = ds.train_records.iter().map(|r| (r.user, r.item)).collect();
        Self::from_edges(ds.n_users, ds.n_items, &pairs)
    }

    /// Builds from distinct (user, item) edges.
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(u32, u32)]) -> Self {
        let mut du = vec![0usize; n_users];
        let mut di = vec![0usize; n_items];
        for &(u, i) in edges {
            du[u as usize] += 1;
            di[i as usize] += 1;
        }
        let mut user_adj = vec![Vec::new(); n_users];
        let mut item_adj = vec![Vec::new(); n_items];
        for &(u, i) in edges {
            let w = 1.0 / ((du[u as usize] * di[i as usize]) as f64).sqrt();
            user_adj[u as usize].push((i, w));
            item_adj[i as usize].push((u, w));
        }
        for l in user_adj.iter_mut().chain(item_adj.iter_mut()) {
            l.sort_by_key(|&(n, _)| n);
        }
        Self { user_adj, item_adj }
    }

    pub fn n_users(&self) -> usize {
        self.user_adj.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_adj.len()
    }

    /// One propagation step.
    pub fn propagate<T: Real>(&self, user: &Matrix<T>, item: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let step = |adj: &[Vec<(u32, f64)>], src: &Matrix<T>| {
            let mut out = Matrix::zeros(adj.len(), src.cols());
            for (r, neigh) in adj.iter().enumerate() {
                let row = out.row_mut(r);
                for &(n, w) in neigh {
                    let w = T::of(w);
                    for (o, &s) in row.iter_mut().zip(src.row(n as usize)) {
                        *o += w * s;
                    }
                }
            }
            out
        };
        (step(&self.user_adj, item), step(&self.item_adj, user))
    }

    /// `(1/(L+1)) * sum_{l=0..L} Â^l E`. The operator is symmetric, so the
    /// same call is its own adjoint.
    pub fn layer_mean<T: Real>(
        &self,
        user: &Matrix<T>,
        item: &Matrix<T>,
        layers: usize,
    ) -> super::Features<T> {
        let mut acc_u = user.clone();
        let mut acc_i = item.clone();
        let mut cur_u = user.clone();
        let mut cur_i = item.clone();
        for _ in 0..layers {
            let (nu, ni) = self.propagate(&cur_u, &cur_i);
            acc_u.axpy(T::one(), &nu);
            acc_i.axpy(T::one(), &ni);
            cur_u = nu;
            cur_i = ni;
        }
        let s = T::of(1.0 / (layers as f64 + 1.0));
        acc_u.scale(s);
        acc_i.scale(s);
        super::Features {
            user: acc_u,
            item: acc_i,
        }
    }
}
