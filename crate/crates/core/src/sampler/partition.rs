/// Labelling of vertices into `K` disjoint categories with dense labels `0..K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Partition {
    /// Compacts arbitrary label values to `0..K`, preserving their relative order.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut distinct: Vec<usize> = raw.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels: Vec<usize> = raw
            .iter()
            .map(|l| distinct.binary_search(l).expect("label was collected"))
            .collect();
        let mut members = vec![Vec::new(); distinct.len()];
        for (v, l) in labels.iter().enumerate() {
            members[*l].push(v);
        }
        Self { labels, members }
    }

    pub fn singletons(n: usize) -> Self {
        Self::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn n_vertices(&self) -> usize {
        self.labels.len()
    }

    /// Category count `K`.
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted vertices of category `k`.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    /// Labels renumbered by first appearance; equal for equal set partitions.
    pub fn canonical(&self) -> Vec<usize> {
        canonical_labels(&self.labels)
    }

    /// Dense labels, disjoint cover, members consistent with labels.
    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.labels.len()];
        for (k, m) in self.members.iter().enumerate() {
            if m.is_empty() || m.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            for v in m {
                if *v >= seen.len() || seen[*v] || self.labels[*v] != k {
                    return false;
                }
                seen[*v] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Restricted-growth form of a labelling.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compaction_keeps_relative_order() {
        let p = Partition::from_labels(&[7, 3, 7, 10]);
        assert_eq!(p.labels(), &[1, 0, 1, 2]);
        assert_eq!(p.k(), 3);
        assert_eq!(p.members(1), &[0, 2]);
        assert!(p.is_valid());
        assert_eq!(p.canonical(), vec![0, 1, 0, 2]);
    }

    #[test]
    fn singletons_are_valid() {
        let p = Partition::singletons(4);
        assert_eq!(p.k(), 4);
        assert!(p.is_valid());
    }
}
