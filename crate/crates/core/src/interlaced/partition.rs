//! Interlacing index maps and group gather/scatter.
//!
//! Following the reshape `H → (Q_h, P_h)`, `W → (Q_w, P_w)`, a position has
//! coordinates `h = qh·P_h + ph`, `w = qw·P_w + pw`.
//!
//! - Long-range groups collect positions sharing the offset `(ph, pw)`; they
//!   are spread `P_h` rows and `P_w` columns apart. Group index `ph·P_w + pw`,
//!   member order `qh·Q_w + qw`.
//! - Short-range groups collect positions sharing the cell `(qh, qw)`; each is
//!   a contiguous `P_h × P_w` patch. Group index `qh·Q_w + qw`, member order
//!   `ph·P_w + pw`.
//!
//! A map lists original row-major positions in grouped order: entry
//! `g·group_size + k` is the position of member `k` of group `g`.

use std::fmt;
use std::str::FromStr;

use crate::error::{IssaError, Result};
use crate::tensor::{FeatureMap, Matrix};

/// A bijection on `0..len` with its inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let inverse = invert(&forward)?;
        Ok(Permutation { forward, inverse })
    }

    pub fn identity(len: usize) -> Self {
        let forward: Vec<usize> = (0..len).collect();
        Permutation {
            inverse: forward.clone(),
            forward,
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// `forward[inverse[i]] == i` and `inverse[forward[i]] == i` for all `i`.
    pub fn is_consistent(&self) -> bool {
        self.forward.len() == self.inverse.len()
            && (0..self.len()).all(|i| {
                self.inverse.get(self.forward[i]) == Some(&i)
                    && self.forward.get(self.inverse[i]) == Some(&i)
            })
    }
}

/// Inverse of an index map, or an integrity error if it is not a bijection.
pub fn invert(map: &[usize]) -> Result<Vec<usize>> {
    let n = map.len();
    let mut inverse = vec![usize::MAX; n];
    for (i, &p) in map.iter().enumerate() {
        if p >= n {
            return Err(IssaError::Integrity(format!(
                "index {p} at slot {i} is out of range for a map of length {n}"
            )));
        }
        if inverse[p] != usize::MAX {
            return Err(IssaError::Integrity(format!(
                "index {p} appears more than once in the map"
            )));
        }
        inverse[p] = i;
    }
    Ok(inverse)
}

/// The interlacing grid for one `H × W` feature map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    pub height: usize,
    pub width: usize,
    pub p_h: usize,
    pub p_w: usize,
    pub q_h: usize,
    pub q_w: usize,
    long: Permutation,
    short: Permutation,
}

impl PartitionSpec {
    pub fn long_index_map(&self) -> &Permutation {
        &self.long
    }

    pub fn short_index_map(&self) -> &Permutation {
        &self.short
    }

    /// Number of long-range groups, `P_h·P_w`.
    pub fn long_groups(&self) -> usize {
        self.p_h * self.p_w
    }

    /// Size of each long-range group (= number of short-range groups), `Q_h·Q_w`.
    pub fn long_group_size(&self) -> usize {
        self.q_h * self.q_w
    }

    pub fn short_groups(&self) -> usize {
        self.long_group_size()
    }

    pub fn short_group_size(&self) -> usize {
        self.long_groups()
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Long-range group containing row-major position `pos`.
    pub fn long_group_of(&self, pos: usize) -> usize {
        let (h, w) = (pos / self.width, pos % self.width);
        (h % self.p_h) * self.p_w + (w % self.p_w)
    }

    /// Short-range group containing row-major position `pos`.
    pub fn short_group_of(&self, pos: usize) -> usize {
        let (h, w) = (pos / self.width, pos % self.width);
        (h / self.p_h) * self.q_w + (w / self.p_w)
    }

    pub fn matches(&self, x: &FeatureMap) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(IssaError::shape(
                "partition spec vs feature map",
                &[self.height, self.width],
                &[x.height(), x.width()],
            ));
        }
        Ok(())
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ISSA-SPEC v1 {} {} {} {}",
            self.height, self.width, self.p_h, self.p_w
        )
    }
}

impl FromStr for PartitionSpec {
    type Err = IssaError;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.trim_end_matches('\n').split(' ').collect();
        if fields.len() != 6 || fields[0] != "ISSA-SPEC" || fields[1] != "v1" {
            return Err(IssaError::Parse(format!("bad partition spec line '{s}'")));
        }
        let mut v = [0usize; 4];
        for (d, f) in v.iter_mut().zip(&fields[2..]) {
            *d = f
                .parse()
                .map_err(|_| IssaError::Parse(format!("bad count '{f}' in '{s}'")))?;
        }
        build_partition(v[0], v[1], v[2], v[3])
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Nearest divisors of `n` to `p` (one below, one above, when they exist).
fn nearest_divisors(n: usize, p: usize) -> Vec<usize> {
    let ds = divisors(n);
    let below = ds.iter().copied().filter(|&d| d < p).max();
    let above = ds.iter().copied().filter(|&d| d > p).min();
    below.into_iter().chain(above).collect()
}

fn check_axis(axis: &str, len: usize, parts: usize) -> Result<()> {
    if len == 0 {
        return Err(IssaError::param(format!("{axis} extent must be >= 1")));
    }
    if parts == 0 || !len.is_multiple_of(parts) {
        return Err(IssaError::param(format!(
            "{axis}: partition count {parts} does not divide {len}; nearest valid counts: {:?}",
            nearest_divisors(len, parts)
        )));
    }
    Ok(())
}

/// Builds the long- and short-range index maps for an `h × w` grid split
/// into `p_h × p_w` partitions.
pub fn build_partition(h: usize, w: usize, p_h: usize, p_w: usize) -> Result<PartitionSpec> {
    check_axis("height", h, p_h)?;
    check_axis("width", w, p_w)?;
    let (q_h, q_w) = (h / p_h, w / p_w);
    let pos = |qh: usize, ph: usize, qw: usize, pw: usize| (qh * p_h + ph) * w + qw * p_w + pw;

    let mut long = Vec::with_capacity(h * w);
    for ph in 0..p_h {
        for pw in 0..p_w {
            for qh in 0..q_h {
                for qw in 0..q_w {
                    long.push(pos(qh, ph, qw, pw));
                }
            }
        }
    }
    let mut short = Vec::with_capacity(h * w);
    for qh in 0..q_h {
        for qw in 0..q_w {
            for ph in 0..p_h {
                for pw in 0..p_w {
                    short.push(pos(qh, ph, qw, pw));
                }
            }
        }
    }
    Ok(PartitionSpec {
        height: h,
        width: w,
        p_h,
        p_w,
        q_h,
        q_w,
        long: Permutation::new(long)?,
        short: Permutation::new(short)?,
    })
}

/// Splits every batch item into `H·W / group_size` matrices of
/// `group_size × C`, where row `k` of group `j` is the channel vector at
/// position `map[j·group_size + k]`. Groups are returned batch-major.
pub fn gather_groups(x: &FeatureMap, map: &[usize], group_size: usize) -> Result<Vec<Matrix>> {
    let m = x.positions();
    if map.len() != m {
        return Err(IssaError::shape("gather_groups map", &[map.len()], &[m]));
    }
    invert(map)?;
    if group_size == 0 || !m.is_multiple_of(group_size) {
        return Err(IssaError::param(format!(
            "group size {group_size} does not divide {m} positions"
        )));
    }
    let c = x.channels();
    let mut groups = Vec::with_capacity(x.batch() * m / group_size);
    for n in 0..x.batch() {
        let flat = x.position_matrix(n);
        for chunk in map.chunks_exact(group_size) {
            let mut g = Vec::with_capacity(group_size * c);
            for &p in chunk {
                g.extend_from_slice(flat.row(p));
            }
            groups.push(Matrix::from_vec_unchecked(group_size, c, g));
        }
    }
    Ok(groups)
}

/// Inverse of [`gather_groups`]: writes each group row back to its original
/// position in a map of dimensions `dims` (NCHW).
pub fn scatter_groups(groups: &[Matrix], map: &[usize], dims: [usize; 4]) -> Result<FeatureMap> {
    let [n, c, h, w] = dims;
    let m = h * w;
    if map.len() != m {
        return Err(IssaError::shape("scatter_groups map", &[map.len()], &[m]));
    }
    invert(map)?;
    if groups.is_empty() {
        return Err(IssaError::param("no groups to scatter"));
    }
    let group_size = groups[0].rows();
    if group_size == 0 || m % group_size != 0 || groups.len() != n * (m / group_size) {
        return Err(IssaError::shape(
            "scatter_groups",
            &[groups.len(), group_size],
            &[n, m],
        ));
    }
    let per_item = m / group_size;
    let mut out = FeatureMap::zeros(n, c, h, w)?;
    for b in 0..n {
        let mut flat = Matrix::zeros(m, c);
        for (j, chunk) in map.chunks_exact(group_size).enumerate() {
            let g = &groups[b * per_item + j];
            if g.shape() != [group_size, c] {
                return Err(IssaError::shape("scatter_groups group", &g.shape(), &[group_size, c]));
            }
            for (k, &p) in chunk.iter().enumerate() {
                flat.row_mut(p).copy_from_slice(g.row(k));
            }
        }
        out.set_position_matrix(b, &flat)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::random_feature_map;

    fn groups_of(map: &[usize], size: usize) -> Vec<Vec<usize>> {
        map.chunks(size).map(|c| c.to_vec()).collect()
    }

    #[test]
    fn one_dimensional_interlacing() {
        let spec = build_partition(4, 1, 2, 1).unwrap();
        assert_eq!(groups_of(spec.long_index_map().as_slice(), 2), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(groups_of(spec.short_index_map().as_slice(), 2), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn degenerate_partition() {
        let spec = build_partition(3, 2, 1, 1).unwrap();
        assert_eq!(spec.long_groups(), 1);
        assert_eq!(spec.long_index_map().as_slice(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(spec.short_groups(), 6);
        assert_eq!(spec.short_group_size(), 1);
    }

    #[test]
    fn four_by_four_offset_group() {
        let spec = build_partition(4, 4, 2, 2).unwrap();
        assert_eq!(&spec.long_index_map().as_slice()[..4], &[0, 2, 8, 10]);
        assert_eq!(&spec.short_index_map().as_slice()[..4], &[0, 1, 4, 5]);
    }

    #[test]
    fn non_divisor_names_axis() {
        let err = build_partition(6, 4, 4, 2).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
        assert!(err.contains("[3, 6]"), "{err}");
        let err = build_partition(4, 6, 2, 4).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn group_lookup_agrees_with_maps() {
        let spec = build_partition(6, 6, 2, 3).unwrap();
        let (lg, ls) = (spec.long_group_size(), spec.short_group_size());
        for (slot, &p) in spec.long_index_map().as_slice().iter().enumerate() {
            assert_eq!(spec.long_group_of(p), slot / lg);
        }
        for (slot, &p) in spec.short_index_map().as_slice().iter().enumerate() {
            assert_eq!(spec.short_group_of(p), slot / ls);
        }
    }

    #[test]
    fn spec_line_round_trip() {
        let spec = build_partition(8, 12, 2, 3).unwrap();
        let line = spec.to_string();
        assert_eq!(line, "ISSA-SPEC v1 8 12 2 3");
        assert_eq!(line.parse::<PartitionSpec>().unwrap(), spec);
        assert!("ISSA-SPEC v2 8 12 2 3".parse::<PartitionSpec>().is_err());
    }

    #[test]
    fn invert_rejects_duplicates() {
        assert!(matches!(invert(&[0, 0, 1]), Err(IssaError::Integrity(_))));
        assert!(matches!(invert(&[0, 3, 1]), Err(IssaError::Integrity(_))));
        assert!(Permutation::new(vec![2, 0, 1]).unwrap().is_consistent());
    }

    #[test]
    fn gather_identity_single_group() {
        let mut rng = Rng::new(1);
        let x = random_feature_map(1, 3, 2, 2, &mut rng).unwrap();
        let id: Vec<usize> = (0..4).collect();
        let g = gather_groups(&x, &id, 4).unwrap();
        assert_eq!(g, vec![x.position_matrix(0)]);
    }

    #[test]
    fn gather_long_groups_rows() {
        let mut rng = Rng::new(2);
        let x = random_feature_map(1, 2, 4, 1, &mut rng).unwrap();
        let spec = build_partition(4, 1, 2, 1).unwrap();
        let g = gather_groups(&x, spec.long_index_map().as_slice(), 2).unwrap();
        let flat = x.position_matrix(0);
        assert_eq!(g[0].row(0), flat.row(0));
        assert_eq!(g[0].row(1), flat.row(2));
    }

    #[test]
    fn gather_rejects_non_bijection() {
        let x = FeatureMap::zeros(1, 2, 2, 2).unwrap();
        assert!(matches!(
            gather_groups(&x, &[0, 1, 1, 3], 2),
            Err(IssaError::Integrity(_))
        ));
    }
}
