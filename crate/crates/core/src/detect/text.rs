//! Line-oriented record format: `class_id x1 y1 x2 y2 [confidence]`,
//! whitespace separated, `#` starts a comment.

use std::fmt::Write as _;

use super::{BBox, Detection, GroundTruthBox};
use crate::error::{Error, Result};

struct Record {
    class_id: usize,
    bbox: BBox,
    confidence: Option<f64>,
}

fn records(text: &str) -> Result<Vec<(usize, Record)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(Error::Format(format!(
                "line {line}: expected 5 or 6 fields, found {}",
                fields.len()
            )));
        }
        let class_id = fields[0]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("line {line}: bad class id {:?}", fields[0])))?;
        let mut nums = [0.0; 5];
        for (slot, s) in nums.iter_mut().zip(&fields[1..]) {
            *slot = s
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {line}: bad number {s:?}")))?;
        }
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        let confidence = (fields.len() == 6).then_some(nums[4]);
        out.push((line, Record { class_id, bbox, confidence }));
    }
    Ok(out)
}

/// Every record must carry a confidence.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    records(text)?
        .into_iter()
        .map(|(line, r)| {
            let conf = r
                .confidence
                .ok_or_else(|| Error::Format(format!("line {line}: detection without confidence")))?;
            Detection::new(r.bbox, r.class_id, conf).map_err(|e| Error::Format(format!("line {line}: {e}")))
        })
        .collect()
}

/// A trailing confidence column, if present, is ignored.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthBox>> {
    records(text)?
        .into_iter()
        .map(|(line, r)| {
            GroundTruthBox::new(r.bbox, r.class_id).map_err(|e| Error::Format(format!("line {line}: {e}")))
        })
        .collect()
}

/// Formats detections one per line; round-trips through
/// [`parse_detections`] exactly.
pub fn format_records(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(s, "{} {:?} {:?} {:?} {:?} {:?}", d.class_id, b.x1, b.y1, b.x2, b.y2, d.confidence);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let text = "# header\n0 0.1 0.1 0.5 0.5 0.9\n\n2 0.2 0.3 0.4 0.6 0.25 # trailing\n";
        let dets = parse_detections(text).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[1].class_id, 2);
        assert_eq!(dets[1].confidence, 0.25);
        let gts = parse_ground_truth("1 0 0 1 1\n").unwrap();
        assert_eq!(gts[0].bbox.coords(), [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn round_trip() {
        let text = "0 0.1 0.2 0.30000000000000004 0.5 0.123456789\n";
        let dets = parse_detections(text).unwrap();
        assert_eq!(parse_detections(&format_records(&dets)).unwrap(), dets);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_detections("0 0.1 0.1 0.5 0.5\n").is_err());
        assert!(parse_detections("x 0.1 0.1 0.5 0.5 0.3\n").is_err());
        assert!(parse_detections("0 0.5 0.1 0.1 0.5 0.3\n").is_err());
        assert!(parse_detections("0 0.1 0.1 0.5 0.5 1.3\n").is_err());
        assert!(parse_ground_truth("0 0.1 0.1\n").is_err());
        let err = parse_ground_truth("0 0 0 1 1\n-1 0 0 1 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
