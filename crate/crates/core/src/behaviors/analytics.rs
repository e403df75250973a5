//! Folds and filters over pin levels, IR logs and traces.

use super::Trace;
use crate::sim::Point;

/// Number of levels equal to 1.
pub fn count_high_pins(levels: &[u8]) -> usize {
    levels.iter().filter(|&&level| level == 1).count()
}

/// Same count as [`count_high_pins`], as a sum over the filtered levels.
pub fn count_high_pins_fold(levels: &[u8]) -> usize {
    levels
        .iter()
        .filter(|&&level| level == 1)
        .fold(0, |acc, &level| acc + usize::from(level))
}

/// Sum of the values strictly greater than `threshold`.
pub fn sum_ir_greater_than(threshold: i64, log: &[i64]) -> i64 {
    log.iter()
        .rev()
        .fold(0, |acc, &x| if x > threshold { x + acc } else { acc })
}

/// Control ticks whose correction magnitude exceeds `threshold`.
pub fn count_high_corrections(trace: &Trace, threshold: i64) -> usize {
    trace
        .records
        .iter()
        .filter_map(|r| r.correction)
        .filter(|c| c.abs() > threshold)
        .count()
}

/// Time of the first return to the starting point.
///
/// The robot must first get farther than four track widths from where the
/// trace starts; the lap ends at the first later record within two widths.
pub fn lap_time(trace: &Trace, width: f64) -> Option<u64> {
    let mut poses = trace
        .records
        .iter()
        .filter_map(|r| r.pose.map(|p| (r.t_ms, p.position())));
    let (_, start) = poses.next()?;
    let mut left_start = false;
    for (t_ms, p) in poses {
        let d = p.distance(start);
        if !left_start {
            left_start = d > 4.0 * width;
        } else if d <= 2.0 * width {
            return Some(t_ms);
        }
    }
    None
}

/// Starting point of a trace, if it carries poses.
pub fn trace_start(trace: &Trace) -> Option<Point> {
    trace.records.iter().find_map(|r| r.pose.map(|p| p.position()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::TraceRecord;
    use crate::sim::Pose;

    #[test]
    fn pin_counts() {
        assert_eq!(count_high_pins(&[1, 0, 1]), 2);
        assert_eq!(count_high_pins(&[]), 0);
        assert_eq!(count_high_pins(&[1; 9]), 9);
        for levels in [&[1, 0, 1][..], &[], &[0, 0], &[1; 5]] {
            assert_eq!(count_high_pins(levels), count_high_pins_fold(levels));
        }
    }

    #[test]
    fn ir_sums() {
        assert_eq!(sum_ir_greater_than(45, &[50, 40, 60]), 110);
        assert_eq!(sum_ir_greater_than(45, &[45, 46]), 46);
        assert_eq!(sum_ir_greater_than(45, &[]), 0);
        assert_eq!(sum_ir_greater_than(100, &[0, 55, 100]), 0);
    }

    fn at(t_ms: u64, x: f64, y: f64) -> TraceRecord {
        TraceRecord {
            t_ms,
            power_left: 0,
            power_right: 0,
            pose: Some(Pose::new(x, y, 0.0)),
            ir: [0; 3],
            bump_left: false,
            bump_right: false,
            error: None,
            correction: Some(t_ms as i64 - 20),
        }
    }

    #[test]
    fn lap_needs_to_leave_then_return() {
        let trace = Trace {
            records: vec![
                at(0, 0.0, 0.0),
                at(10, 0.01, 0.0),
                at(20, 0.5, 0.0),
                at(30, 0.04, 0.0),
                at(40, 0.0, 0.0),
            ],
        };
        assert_eq!(lap_time(&trace, 0.025), Some(30));
        assert_eq!(lap_time(&trace, 0.01), Some(40));
        let never = Trace {
            records: trace.records[..3].to_vec(),
        };
        assert_eq!(lap_time(&never, 0.025), None);
        assert_eq!(lap_time(&Trace::new(), 0.025), None);
        assert_eq!(count_high_corrections(&trace, 10), 2);
    }
}
