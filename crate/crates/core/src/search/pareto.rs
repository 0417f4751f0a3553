use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub accuracy: f64,
    pub latency_ms: f64,
}

fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.accuracy >= b.accuracy && a.latency_ms <= b.latency_ms && (a.accuracy > b.accuracy || a.latency_ms < b.latency_ms)
}

/// Indices of the non-dominated points (maximize accuracy, minimize latency),
/// ordered by latency then index. Of several identical points only the
/// first is kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<usize> {
    let mut front: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let p = &points[i];
            !points.iter().enumerate().any(|(j, q)| dominates(q, p) || (j < i && q == p))
        })
        .collect();
    front.sort_by(|&a, &b| points[a].latency_ms.total_cmp(&points[b].latency_ms).then(a.cmp(&b)));
    front
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(accuracy: f64, latency_ms: f64) -> ParetoPoint {
        ParetoPoint { accuracy, latency_ms }
    }

    #[test]
    fn three_point_example() {
        let pts = [p(0.9, 10.0), p(0.8, 5.0), p(0.7, 20.0)];
        assert_eq!(pareto_front(&pts), vec![1, 0]);
    }

    #[test]
    fn dominated_and_duplicates() {
        assert_eq!(pareto_front(&[p(0.5, 5.0), p(0.6, 4.0)]), vec![1]);
        assert_eq!(pareto_front(&[p(0.5, 5.0), p(0.5, 5.0)]), vec![0]);
        assert!(pareto_front(&[]).is_empty());
    }
}
