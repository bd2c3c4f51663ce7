use serde::{Deserialize, Serialize};

use super::{dominates_slices, hypervolume, Hypervolume, ObjectiveVector};
use crate::search_space::Genotype;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub genotype: Genotype,
    pub objectives: ObjectiveVector,
}

/// Mutually non-dominated set of evaluated genotypes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
}

impl ParetoArchive {
    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, g: &Genotype) -> bool {
        self.entries.iter().any(|e| &e.genotype == g)
    }

    /// Inserts unless the point is dominated by (or already present in) the
    /// archive; entries the new point dominates are removed. Returns whether
    /// the point was added.
    pub fn insert(&mut self, genotype: Genotype, objectives: ObjectiveVector) -> bool {
        let new = objectives.to_array();
        for e in &self.entries {
            let old = e.objectives.to_array();
            if dominates_slices(&old, &new) || (e.genotype == genotype && old == new) {
                return false;
            }
        }
        self.entries
            .retain(|e| !dominates_slices(&new, &e.objectives.to_array()));
        self.entries.push(ArchiveEntry { genotype, objectives });
        true
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.entries.iter().map(|e| e.objectives).collect()
    }

    pub fn hypervolume(&self, reference: &ObjectiveVector) -> Hypervolume {
        hypervolume(&self.objectives(), reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{random_genotype, SearchSpace};
    use rand::SeedableRng;

    #[test]
    fn insertion_keeps_mutual_nondominance() {
        let s = SearchSpace::desk_scale();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut a = ParetoArchive::default();
        let g: Vec<_> = (0..4).map(|_| random_genotype(&s, &mut rng)).collect();
        assert!(a.insert(g[0].clone(), ObjectiveVector::new(2., 2., 2.)));
        assert!(a.insert(g[1].clone(), ObjectiveVector::new(1., 3., 2.)));
        assert!(!a.insert(g[2].clone(), ObjectiveVector::new(3., 3., 3.)));
        assert!(!a.insert(g[0].clone(), ObjectiveVector::new(2., 2., 2.)));
        assert!(a.insert(g[3].clone(), ObjectiveVector::new(1., 1., 1.)));
        assert_eq!(a.len(), 1);
        assert!(a.contains(&g[3]));
    }
}
