use super::numel_of;

/// Numpy-style broadcast of two shapes, aligned at the trailing axis.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps a flat index of a broadcast output onto the flat index of one input.
pub(crate) enum IndexMap {
    Identity,
    Scalar,
    /// Input equals a trailing block of the output.
    Cycle(usize),
    Table(Vec<usize>),
}

impl IndexMap {
    pub(crate) fn new(out: &[usize], input: &[usize]) -> Self {
        let n_in = numel_of(input);
        if n_in == 1 {
            return if numel_of(out) == 1 {
                IndexMap::Identity
            } else {
                IndexMap::Scalar
            };
        }
        let stripped: Vec<usize> = {
            let lead = input.iter().take_while(|&&d| d == 1).count();
            input[lead..].to_vec()
        };
        if stripped.len() == out.len() && stripped == out {
            return IndexMap::Identity;
        }
        if stripped.len() <= out.len() && out[out.len() - stripped.len()..] == stripped[..] {
            return IndexMap::Cycle(n_in);
        }

        // General case: zero strides on broadcast axes.
        let rank = out.len();
        let offset = rank - input.len();
        let mut in_strides = vec![0usize; rank];
        let mut stride = 1;
        for i in (0..input.len()).rev() {
            if input[i] != 1 {
                in_strides[i + offset] = stride;
            }
            stride *= input[i];
        }
        let total = numel_of(out);
        let mut table = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        let mut pos = 0usize;
        for _ in 0..total {
            table.push(pos);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                pos += in_strides[axis];
                if counter[axis] < out[axis] {
                    break;
                }
                pos -= in_strides[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
        IndexMap::Table(table)
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> usize {
        match self {
            IndexMap::Identity => i,
            IndexMap::Scalar => 0,
            IndexMap::Cycle(n) => i % n,
            IndexMap::Table(t) => t[i],
        }
    }

    /// Sums `grad` (output-shaped) back into an input of `n_in` elements.
    pub(crate) fn reduce(&self, grad: &[f64], n_in: usize) -> Vec<f64> {
        match self {
            IndexMap::Identity => grad.to_vec(),
            _ => {
                let mut acc = vec![0.0; n_in];
                for (i, g) in grad.iter().enumerate() {
                    acc[self.get(i)] += g;
                }
                acc
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_broadcast_from_the_right() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 3], &[5, 1]), Some(vec![2, 5, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn general_table_matches_manual_indexing() {
        // out [2, 3], input [2, 1]: column broadcast
        let map = IndexMap::new(&[2, 3], &[2, 1]);
        let got: Vec<usize> = (0..6).map(|i| map.get(i)).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1]);
        let map = IndexMap::new(&[2, 3], &[3]);
        assert!(matches!(map, IndexMap::Cycle(3)));
    }
}
