use std::collections::VecDeque;

use crate::ndcore::Rng;

/// Stores of replaced parents used by the archive-based mutation operators.
///
/// - `union`: capacity `N`, random eviction once full (ops 9 and 10).
/// - `recent`: FIFO of capacity `N`; evictions cascade into `former` (op 13).
/// - `former`: FIFO of capacity `2N` (op 13).
#[derive(Clone, Debug, PartialEq)]
pub struct Archives {
    capacity: usize,
    union: Vec<Vec<f64>>,
    recent: VecDeque<Vec<f64>>,
    former: VecDeque<Vec<f64>>,
}

impl Archives {
    pub fn new(population_size: usize) -> Self {
        Self {
            capacity: population_size,
            union: Vec::with_capacity(population_size),
            recent: VecDeque::with_capacity(population_size),
            former: VecDeque::with_capacity(2 * population_size),
        }
    }

    pub fn union(&self) -> &[Vec<f64>] {
        &self.union
    }

    pub fn recent(&self) -> &VecDeque<Vec<f64>> {
        &self.recent
    }

    pub fn former(&self) -> &VecDeque<Vec<f64>> {
        &self.former
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Records a parent that lost its slot to an offspring.
    pub fn push_replaced(&mut self, parent: Vec<f64>, rng: &mut Rng) {
        if self.union.len() < self.capacity {
            self.union.push(parent.clone());
        } else if self.capacity > 0 {
            let slot = rng.index(self.capacity);
            self.union[slot] = parent.clone();
        }
        self.recent.push_back(parent);
        if self.recent.len() > self.capacity {
            if let Some(old) = self.recent.pop_front() {
                self.former.push_back(old);
                if self.former.len() > 2 * self.capacity {
                    self.former.pop_front();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacities_hold_and_recent_cascades() {
        let mut a = Archives::new(3);
        let mut rng = Rng::new(0);
        for k in 0..20 {
            a.push_replaced(vec![k as f64], &mut rng);
            assert!(a.union().len() <= 3);
            assert!(a.recent().len() <= 3);
            assert!(a.former().len() <= 6);
        }
        // recent holds the 3 newest, former the 6 before them
        let recent: Vec<f64> = a.recent().iter().map(|v| v[0]).collect();
        assert_eq!(recent, vec![17.0, 18.0, 19.0]);
        let former: Vec<f64> = a.former().iter().map(|v| v[0]).collect();
        assert_eq!(former, vec![11.0, 12.0, 13.0, 14.0, 15.0, 16.0]);
    }
}
