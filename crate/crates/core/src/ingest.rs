//! Streaming CSV ingestion and assembly of segment-day profiles.
//!
//! Records file: header `segment_id,date,minute,speed_mph,reference_speed_mph`,
//! one observation per line. Malformed lines are counted and skipped; only I/O
//! failures and a wrong header are fatal.
//!
//! Assembly groups records by segment and date, averages duplicate minutes,
//! and linearly interpolates interior gaps of at most `gap_fill_minutes`
//! missing minutes. Longer gaps, and minutes before the first or after the
//! last observation, stay invalid.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use thiserror::Error;

use crate::bitmask::{MinuteMask, MINUTES_PER_DAY};
use crate::model::{
    CongestionParams, ModelError, SegmentDayProfile, SegmentId, SegmentMeta, SpeedRecord,
};

pub const RECORDS_HEADER: &str = "segment_id,date,minute,speed_mph,reference_speed_mph";
pub const SEGMENTS_HEADER: &str = "segment_id,road,order_index,length_miles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Csv,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        line: u64,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: {reason}")]
    BadSegmentLine { line: u64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            other => IngestError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{other:?}"),
            )),
        }
    }
}

/// Why a single line was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rejection {
    FieldCount,
    EmptySegmentId,
    BadDate,
    BadMinute,
    MinuteOutOfRange,
    BadSpeed,
    NegativeSpeed,
    BadReferenceSpeed,
    NonpositiveReferenceSpeed,
    Encoding,
}

impl Rejection {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rejection::FieldCount => "wrong field count",
            Rejection::EmptySegmentId => "empty segment id",
            Rejection::BadDate => "unparsable date",
            Rejection::BadMinute => "unparsable minute",
            Rejection::MinuteOutOfRange => "minute out of range",
            Rejection::BadSpeed => "unparsable speed",
            Rejection::NegativeSpeed => "negative speed",
            Rejection::BadReferenceSpeed => "unparsable reference speed",
            Rejection::NonpositiveReferenceSpeed => "nonpositive reference speed",
            Rejection::Encoding => "invalid UTF-8",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedLine {
    Record(SpeedRecord),
    Rejected { line: u64, reason: Rejection },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records_read: u64,
    pub records_rejected: u64,
    pub rejection_reasons: BTreeMap<String, u64>,
    /// Minutes filled by interpolation.
    pub gaps_filled: u64,
    /// Minutes observed more than once and averaged.
    pub duplicates_merged: u64,
    pub profiles_emitted: u64,
}

impl IngestReport {
    pub fn records_accepted(&self) -> u64 {
        self.records_read - self.records_rejected
    }

    pub fn reject(&mut self, reason: Rejection) {
        self.records_read += 1;
        self.records_rejected += 1;
        *self
            .rejection_reasons
            .entry(reason.as_str().to_string())
            .or_insert(0) += 1;
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = format!(
            "records_read = {}\nrecords_rejected = {}\ngaps_filled = {}\nduplicates_merged = {}\nprofiles_emitted = {}\n",
            self.records_read,
            self.records_rejected,
            self.gaps_filled,
            self.duplicates_merged,
            self.profiles_emitted
        );
        for (reason, count) in &self.rejection_reasons {
            out.push_str(&format!("rejected[{reason}] = {count}\n"));
        }
        out
    }
}

/// Iterator over the lines of a records file, in file order.
pub struct RecordReader<R: Read> {
    inner: csv::Reader<R>,
    row: csv::ByteRecord,
    header_checked: bool,
    ids: HashMap<Vec<u8>, SegmentId>,
    last_date: Option<(Vec<u8>, NaiveDate)>,
}

impl<R: Read> RecordReader<R> {
    pub fn new(reader: R, format: InputFormat) -> Self {
        let InputFormat::Csv = format;
        let inner = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        Self {
            inner,
            row: csv::ByteRecord::new(),
            header_checked: false,
            ids: HashMap::new(),
            last_date: None,
        }
    }

    pub fn bytes_read(&self) -> u64 {
        self.inner.position().byte()
    }

    fn check_header(&mut self) -> Result<bool, IngestError> {
        if !self.inner.read_byte_record(&mut self.row)? {
            return Ok(false);
        }
        let found: Vec<&str> = self
            .row
            .iter()
            .map(|f| std::str::from_utf8(f).unwrap_or("?"))
            .collect();
        let found = found.join(",");
        if found.trim_start_matches('\u{feff}') != RECORDS_HEADER {
            return Err(IngestError::BadHeader {
                line: 1,
                expected: RECORDS_HEADER,
                found,
            });
        }
        Ok(true)
    }

    fn parse_row(&mut self) -> Result<SpeedRecord, Rejection> {
        let row = &self.row;
        if row.len() != 5 {
            return Err(Rejection::FieldCount);
        }
        let text = |i: usize| std::str::from_utf8(&row[i]).map_err(|_| Rejection::Encoding);

        let raw_id = &row[0];
        if raw_id.is_empty() {
            return Err(Rejection::EmptySegmentId);
        }
        let date = match &self.last_date {
            Some((raw, date)) if raw.as_slice() == &row[1] => *date,
            _ => {
                let date: NaiveDate = text(1)?.parse().map_err(|_| Rejection::BadDate)?;
                self.last_date = Some((row[1].to_vec(), date));
                date
            }
        };
        let minute: i64 = text(2)?.parse().map_err(|_| Rejection::BadMinute)?;
        if !(0..MINUTES_PER_DAY as i64).contains(&minute) {
            return Err(Rejection::MinuteOutOfRange);
        }
        let speed: f64 = text(3)?.parse().map_err(|_| Rejection::BadSpeed)?;
        if !speed.is_finite() {
            return Err(Rejection::BadSpeed);
        }
        if speed < 0.0 {
            return Err(Rejection::NegativeSpeed);
        }
        let reference: f64 = text(4)?.parse().map_err(|_| Rejection::BadReferenceSpeed)?;
        if !reference.is_finite() {
            return Err(Rejection::BadReferenceSpeed);
        }
        if reference <= 0.0 {
            return Err(Rejection::NonpositiveReferenceSpeed);
        }

        let segment_id = match self.ids.get(raw_id) {
            Some(id) => id.clone(),
            None => {
                let id = SegmentId::new(text(0)?);
                self.ids.insert(raw_id.to_vec(), id.clone());
                id
            }
        };
        Ok(SpeedRecord {
            segment_id,
            date,
            minute: minute as u16,
            speed_mph: speed,
            reference_speed_mph: reference,
        })
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<ParsedLine, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.header_checked {
            self.header_checked = true;
            match self.check_header() {
                Ok(true) => {}
                Ok(false) => return None,
                Err(e) => return Some(Err(e)),
            }
        }
        loop {
            match self.inner.read_byte_record(&mut self.row) {
                Ok(false) => return None,
                Err(e) => return Some(Err(e.into())),
                Ok(true) => {}
            }
            // Blank lines are not records.
            if self.row.len() == 1 && self.row[0].is_empty() {
                continue;
            }
            let line = self.row.position().map_or(0, |p| p.line());
            return Some(Ok(match self.parse_row() {
                Ok(record) => ParsedLine::Record(record),
                Err(reason) => ParsedLine::Rejected { line, reason },
            }));
        }
    }
}

/// Parsed records plus parse-level counts.
#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<SpeedRecord>,
    pub report: IngestReport,
    pub bytes_read: u64,
}

pub fn parse_records<R: Read>(
    stream: R,
    format: InputFormat,
) -> Result<ParsedRecords, IngestError> {
    let mut reader = RecordReader::new(stream, format);
    let mut out = ParsedRecords::default();
    for line in reader.by_ref() {
        match line? {
            ParsedLine::Record(record) => {
                out.report.records_read += 1;
                out.records.push(record);
            }
            ParsedLine::Rejected { reason, .. } => out.report.reject(reason),
        }
    }
    out.bytes_read = reader.bytes_read();
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Obs {
    minute: u16,
    speed: f64,
    reference: f64,
}

/// Builds one profile per observed (segment, date), sorted by segment then date.
///
/// The returned report counts the given records as read and accepted; merge
/// it with the parse report for end-to-end totals.
pub fn assemble_profiles(
    records: impl IntoIterator<Item = SpeedRecord>,
    params: &CongestionParams,
) -> (Vec<SegmentDayProfile>, IngestReport) {
    let mut report = IngestReport::default();
    let mut groups: HashMap<(SegmentId, NaiveDate), Vec<Obs>> = HashMap::new();
    for r in records {
        report.records_read += 1;
        groups.entry((r.segment_id, r.date)).or_default().push(Obs {
            minute: r.minute,
            speed: r.speed_mph,
            reference: r.reference_speed_mph,
        });
    }

    let mut keys: Vec<_> = groups.keys().cloned().collect();
    keys.sort();
    let mut profiles = Vec::with_capacity(keys.len());
    for key in keys {
        let obs = groups.remove(&key).expect("key taken from map");
        let (id, date) = key;
        profiles.push(build_profile(
            id,
            date,
            obs,
            params.gap_fill_minutes,
            &mut report,
        ));
    }
    report.profiles_emitted = profiles.len() as u64;
    (profiles, report)
}

fn build_profile(
    segment_id: SegmentId,
    date: NaiveDate,
    mut obs: Vec<Obs>,
    gap_fill: usize,
    report: &mut IngestReport,
) -> SegmentDayProfile {
    // Total order on all fields so duplicate averaging is input-order independent.
    obs.sort_by(|a, b| {
        a.minute
            .cmp(&b.minute)
            .then(a.speed.total_cmp(&b.speed))
            .then(a.reference.total_cmp(&b.reference))
    });

    let mut speeds = vec![0.0; MINUTES_PER_DAY];
    let mut refs = vec![0.0; MINUTES_PER_DAY];
    let mut valid = MinuteMask::empty();
    let mut observed: Vec<usize> = Vec::new();

    for dupes in obs.chunk_by(|a, b| a.minute == b.minute) {
        let minute = dupes[0].minute as usize;
        let n = dupes.len() as f64;
        speeds[minute] = dupes.iter().map(|o| o.speed).sum::<f64>() / n;
        refs[minute] = dupes.iter().map(|o| o.reference).sum::<f64>() / n;
        report.duplicates_merged += dupes.len() as u64 - 1;
        valid.set(minute, true);
        observed.push(minute);
    }

    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let missing = b - a - 1;
        if missing == 0 || missing > gap_fill {
            continue;
        }
        let span = (b - a) as f64;
        for m in a + 1..b {
            let t = (m - a) as f64 / span;
            speeds[m] = speeds[a] + (speeds[b] - speeds[a]) * t;
            refs[m] = refs[a] + (refs[b] - refs[a]) * t;
            valid.set(m, true);
        }
        report.gaps_filled += missing as u64;
    }

    SegmentDayProfile::new(segment_id, date, speeds, refs, valid)
        .expect("records are validated before assembly")
}

/// Parsed and assembled input.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub profiles: Vec<SegmentDayProfile>,
    pub report: IngestReport,
    pub bytes_read: u64,
}

/// Parse then assemble in one call.
pub fn ingest<R: Read>(stream: R, params: &CongestionParams) -> Result<Ingested, IngestError> {
    let parsed = parse_records(stream, InputFormat::Csv)?;
    let (profiles, assembly) = assemble_profiles(parsed.records, params);
    let mut report = parsed.report;
    report.gaps_filled = assembly.gaps_filled;
    report.duplicates_merged = assembly.duplicates_merged;
    report.profiles_emitted = assembly.profiles_emitted;
    Ok(Ingested {
        profiles,
        report,
        bytes_read: parsed.bytes_read,
    })
}

/// Reads `segment_id,road,order_index,length_miles[,weight]`. Any malformed
/// line is fatal since the network must be complete.
pub fn parse_segments<R: Read>(stream: R) -> Result<Vec<SegmentMeta>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream);
    let mut records = reader.records();
    match records.next() {
        None => return Ok(Vec::new()),
        Some(header) => {
            let header = header?;
            let found = header.iter().collect::<Vec<_>>().join(",");
            let found_trim = found.trim_start_matches('\u{feff}');
            if found_trim != SEGMENTS_HEADER && found_trim != format!("{SEGMENTS_HEADER},weight") {
                return Err(IngestError::BadHeader {
                    line: 1,
                    expected: SEGMENTS_HEADER,
                    found,
                });
            }
        }
    }
    let mut out = Vec::new();
    for row in records {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        let bad = |reason: String| IngestError::BadSegmentLine { line, reason };
        if row.len() != 4 && row.len() != 5 {
            return Err(bad(format!("expected 4 or 5 fields, got {}", row.len())));
        }
        if row[0].is_empty() {
            return Err(bad("empty segment id".into()));
        }
        let order_index: u32 = row[2]
            .parse()
            .map_err(|_| bad(format!("bad order_index `{}`", &row[2])))?;
        let length_miles: f64 = row[3]
            .parse()
            .map_err(|_| bad(format!("bad length_miles `{}`", &row[3])))?;
        let mut meta = SegmentMeta::new(&row[0], &row[1], order_index, length_miles)
            .map_err(|e| bad(e.to_string()))?;
        if row.len() == 5 {
            meta.weight = row[4]
                .parse()
                .map_err(|_| bad(format!("bad weight `{}`", &row[4])))?;
            meta.validate().map_err(|e| bad(e.to_string()))?;
        }
        out.push(meta);
    }
    Ok(out)
}

pub fn write_records_csv<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a SpeedRecord>,
) -> std::io::Result<()> {
    writeln!(out, "{RECORDS_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.segment_id, r.date, r.minute, r.speed_mph, r.reference_speed_mph
        )?;
    }
    out.flush()
}

pub fn write_segments_csv<'a, W: Write>(
    mut out: W,
    segments: impl IntoIterator<Item = &'a SegmentMeta>,
) -> std::io::Result<()> {
    writeln!(out, "{SEGMENTS_HEADER},weight")?;
    for s in segments {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.segment_id, s.road, s.order_index, s.length_miles, s.weight
        )?;
    }
    out.flush()
}
