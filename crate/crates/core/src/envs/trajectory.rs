use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EventRecord;
use crate::error::{DpiError, Result};

/// One JSON-lines record of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub state: serde_json::Value,
    pub action: usize,
    pub reward: [f64; 5],
    pub events: Vec<EventRecord>,
    pub done: bool,
    pub success: bool,
}

pub fn write_trajectory<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> Result<()> {
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|e| DpiError::Serde(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| DpiError::io("<trajectory>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EventKind;

    #[test]
    fn one_line_per_record() {
        let rec = TrajectoryRecord {
            t: 3,
            state: serde_json::json!({"pos": 0.5}),
            action: 1,
            reward: [1.0, -1.0, -2.0, -0.4, 0.0],
            events: vec![EventRecord {
                kind: EventKind::EnergyShock,
                step: 3,
                params: vec![("lost".into(), 4.0)],
            }],
            done: false,
            success: false,
        };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: TrajectoryRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(back, rec);
    }
}
