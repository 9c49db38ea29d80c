//! Detection output files: run-length encoded masks, RC profiles and the
//! evaluated segment-day universe.

use std::collections::BTreeSet;
use std::io::Write;

use chrono::NaiveDate;

use crate::bitmask::MINUTES_PER_DAY;
use crate::evaluate::{EvaluateError, LabelSet};
use crate::model::{DetectionResult, SegmentDayProfile, SegmentId};

pub const MASKS_HEADER: &str = "segment_id,date,start_minute,end_minute";
pub const RC_HEADER: &str = "segment_id,start_minute,end_minute";
pub const DAYS_HEADER: &str = "segment_id,date,valid_minutes,congested_minutes";

/// One line per maximal congested run; `end_minute` is inclusive.
pub fn write_masks_csv<W: Write>(mut out: W, results: &[DetectionResult]) -> std::io::Result<()> {
    writeln!(out, "{MASKS_HEADER}")?;
    for r in results {
        for (date, mask) in &r.per_day_masks {
            for (start, end) in mask.runs() {
                writeln!(out, "{},{date},{start},{end}", r.segment_id)?;
            }
        }
    }
    out.flush()
}

pub fn write_rc_csv<W: Write>(mut out: W, results: &[DetectionResult]) -> std::io::Result<()> {
    writeln!(out, "{RC_HEADER}")?;
    for r in results {
        for (start, end) in r.rc_profile.runs() {
            writeln!(out, "{},{start},{end}", r.segment_id)?;
        }
    }
    out.flush()
}

/// Every detected segment-day, so days without congestion are still listed.
pub fn write_days_csv<W: Write>(
    mut out: W,
    results: &[DetectionResult],
    profiles: &[SegmentDayProfile],
) -> std::io::Result<()> {
    let valid: std::collections::HashMap<(&SegmentId, NaiveDate), u32> = profiles
        .iter()
        .map(|p| ((p.segment_id(), p.date()), p.valid().count_ones()))
        .collect();
    writeln!(out, "{DAYS_HEADER}")?;
    for r in results {
        for (date, mask) in &r.per_day_masks {
            let v = valid.get(&(&r.segment_id, *date)).copied().unwrap_or(0);
            writeln!(out, "{},{date},{v},{}", r.segment_id, mask.count_ones())?;
        }
    }
    out.flush()
}

fn lines_after_header<'a>(
    text: &'a str,
    header: &str,
) -> Result<impl Iterator<Item = (u64, Vec<&'a str>)>, EvaluateError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == header => {}
        Some(h) => {
            return Err(EvaluateError::BadLine {
                line: 1,
                reason: format!("expected header `{header}`, found `{h}`"),
            })
        }
        None => {
            return Err(EvaluateError::BadLine {
                line: 1,
                reason: format!("empty file, expected header `{header}`"),
            })
        }
    }
    Ok(lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i as u64 + 2, l.split(',').map(str::trim).collect())))
}

fn parse_date(line: u64, s: &str) -> Result<NaiveDate, EvaluateError> {
    s.parse().map_err(|_| EvaluateError::BadLine {
        line,
        reason: format!("bad date `{s}`"),
    })
}

fn parse_minute(line: u64, s: &str) -> Result<usize, EvaluateError> {
    s.parse::<usize>()
        .ok()
        .filter(|m| *m < MINUTES_PER_DAY)
        .ok_or_else(|| EvaluateError::BadLine {
            line,
            reason: format!("bad minute `{s}`"),
        })
}

fn field_count(line: u64, fields: &[&str], expected: usize) -> Result<(), EvaluateError> {
    if fields.len() != expected {
        return Err(EvaluateError::BadLine {
            line,
            reason: format!("expected {expected} fields, got {}", fields.len()),
        });
    }
    Ok(())
}

pub fn parse_days_csv(text: &str) -> Result<BTreeSet<(SegmentId, NaiveDate)>, EvaluateError> {
    let mut out = BTreeSet::new();
    for (line, fields) in lines_after_header(text, DAYS_HEADER)? {
        field_count(line, &fields, 4)?;
        out.insert((SegmentId::new(fields[0]), parse_date(line, fields[1])?));
    }
    Ok(out)
}

/// Congested cells from a masks file; only days with a run appear.
pub fn parse_masks_csv(text: &str) -> Result<LabelSet, EvaluateError> {
    let mut out = LabelSet::new();
    for (line, fields) in lines_after_header(text, MASKS_HEADER)? {
        field_count(line, &fields, 4)?;
        let date = parse_date(line, fields[1])?;
        let (start, end) = (
            parse_minute(line, fields[2])?,
            parse_minute(line, fields[3])?,
        );
        if start > end {
            return Err(EvaluateError::BadLine {
                line,
                reason: format!("run {start}..{end} is reversed"),
            });
        }
        out.entry((SegmentId::new(fields[0]), date))
            .or_default()
            .set_range(start, end, true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmask::MinuteMask;
    use std::collections::BTreeMap;

    #[test]
    fn masks_roundtrip_through_rle() {
        let d1 = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let d2 = NaiveDate::from_ymd_opt(2018, 1, 2).unwrap();
        let mask = MinuteMask::from_runs(&[(0, 3), (500, 620), (1439, 1439)]);
        let result = DetectionResult {
            segment_id: "I-35-0001".into(),
            per_day_masks: BTreeMap::from([(d1, mask), (d2, MinuteMask::empty())]),
            rc_profile: MinuteMask::from_runs(&[(500, 510)]),
            avg_daily_congestion_hours: 0.0,
            rc_hours: 0.0,
            total_delay_vehicle_hours: 0.0,
            total_cost: 0.0,
            floor_capped_minutes: 0,
        };
        let mut buf = Vec::new();
        write_masks_csv(&mut buf, std::slice::from_ref(&result)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(2), Some("I-35-0001,2018-01-01,500,620"));
        let parsed = parse_masks_csv(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[&("I-35-0001".into(), d1)], mask);

        let mut buf = Vec::new();
        write_days_csv(&mut buf, std::slice::from_ref(&result), &[]).unwrap();
        let days = parse_days_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(days.len(), 2);

        let mut buf = Vec::new();
        write_rc_csv(&mut buf, &[result]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{RC_HEADER}\nI-35-0001,500,510\n")
        );
    }

    #[test]
    fn malformed_masks_rejected() {
        let bad = format!("{MASKS_HEADER}\nS,2018-01-01,10,5\n");
        assert!(matches!(
            parse_masks_csv(&bad),
            Err(EvaluateError::BadLine { line: 2, .. })
        ));
        assert!(parse_masks_csv("nope\n").is_err());
    }
}
