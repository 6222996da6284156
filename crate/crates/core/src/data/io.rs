//! CSV readers and writers for the three input formats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;

use super::{
    expand_bin_centers, on_bin_edge, speeds_by_zone, BinnedZoneCount, Condition, Fidelity,
    SpeedRecord, TechGroup,
};
use crate::error::{Error, Result};
use crate::fatality::{CrashType, CurvePoint};

pub const LOWFI_HEADER: [&str; 6] = [
    "participant_id",
    "fidelity",
    "tech_group",
    "ivs_present",
    "zone_mph",
    "speed_mph",
];
pub const HIFI_HEADER: [&str; 4] = ["zone_mph", "hour_index", "bin_lower_mph", "count"];
pub const FATALITY_HEADER: [&str; 4] = ["crash_type", "speed_mph", "fatality_fraction", "n_obs"];

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn writer<W: Write>(output: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(output)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            row: 1,
            reason: format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

struct Row<'a> {
    record: &'a StringRecord,
    line: u64,
}

impl Row<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            row: self.line,
            reason: reason.into(),
        }
    }

    fn field(&self, idx: usize, name: &str) -> Result<&str> {
        self.record.get(idx).ok_or_else(|| self.err(format!("missing field `{name}`")))
    }

    fn number<T: std::str::FromStr>(&self, idx: usize, name: &str) -> Result<T> {
        let raw = self.field(idx, name)?;
        raw.parse()
            .map_err(|_| self.err(format!("field `{name}`: cannot parse `{raw}` as a number")))
    }
}

fn rows<R: Read>(rdr: &mut csv::Reader<R>, width: usize) -> impl Iterator<Item = Result<(StringRecord, u64)>> + '_ {
    rdr.records().map(move |rec| {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            Error::Parse {
                row,
                reason: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(Error::Parse {
                row: line,
                reason: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        Ok((rec, line))
    })
}

/// Parses low-fidelity speed records. Row numbers in errors count the header
/// as row 1.
pub fn parse_lowfi_records<R: Read>(input: R, zones: &[u32]) -> Result<Vec<SpeedRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &LOWFI_HEADER)?;
    let mut out = Vec::new();
    for item in rows(&mut rdr, LOWFI_HEADER.len()) {
        let (record, line) = item?;
        let row = Row { record: &record, line };
        let fidelity = match row.field(1, "fidelity")? {
            "low" => Fidelity::Low,
            "high" => Fidelity::High,
            other => return Err(row.err(format!("unknown fidelity `{other}`"))),
        };
        let tech_group = match row.field(2, "tech_group")? {
            "ivs_plus_es" => TechGroup::IvsPlusEs,
            "ivs_minus_es" => TechGroup::IvsMinusEs,
            "none" => TechGroup::None,
            other => return Err(row.err(format!("unknown tech_group `{other}`"))),
        };
        let ivs_present = match row.field(3, "ivs_present")? {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(row.err(format!("ivs_present must be 0 or 1, got `{other}`"))),
        };
        let rec = SpeedRecord {
            participant_id: row.field(0, "participant_id")?.to_string(),
            fidelity,
            tech_group,
            ivs_present,
            zone_mph: row.number(4, "zone_mph")?,
            speed_mph: row.number(5, "speed_mph")?,
        };
        rec.validate(zones).map_err(|e| row.err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_lowfi_records<W: Write>(output: W, records: &[SpeedRecord]) -> Result<()> {
    let mut w = writer(output);
    w.write_record(LOWFI_HEADER)?;
    for r in records {
        w.write_record([
            r.participant_id.clone(),
            r.fidelity.as_str().to_string(),
            r.tech_group.as_str().to_string(),
            u8::from(r.ivs_present).to_string(),
            r.zone_mph.to_string(),
            r.speed_mph.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn parse_hifi_bins<R: Read>(input: R, zones: &[u32], bin_width: f64) -> Result<Vec<BinnedZoneCount>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &HIFI_HEADER)?;
    let mut out = Vec::new();
    for item in rows(&mut rdr, HIFI_HEADER.len()) {
        let (record, line) = item?;
        let row = Row { record: &record, line };
        let bin = BinnedZoneCount {
            zone_mph: row.number(0, "zone_mph")?,
            hour_index: row.number(1, "hour_index")?,
            bin_lower_mph: row.number(2, "bin_lower_mph")?,
            count: row.number(3, "count")?,
        };
        if !zones.contains(&bin.zone_mph) {
            return Err(row.err(format!("unknown zone {} mph", bin.zone_mph)));
        }
        if !bin.bin_lower_mph.is_finite() || !on_bin_edge(bin.bin_lower_mph, bin_width) {
            return Err(row.err(format!(
                "bin_lower_mph {} is not a multiple of the {bin_width} mph bin width",
                bin.bin_lower_mph
            )));
        }
        out.push(bin);
    }
    Ok(out)
}

pub fn write_hifi_bins<W: Write>(output: W, bins: &[BinnedZoneCount]) -> Result<()> {
    let mut w = writer(output);
    w.write_record(HIFI_HEADER)?;
    for b in bins {
        w.write_record([
            b.zone_mph.to_string(),
            b.hour_index.to_string(),
            b.bin_lower_mph.to_string(),
            b.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn parse_fatality_points<R: Read>(input: R) -> Result<Vec<(CrashType, CurvePoint)>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &FATALITY_HEADER)?;
    let mut out = Vec::new();
    for item in rows(&mut rdr, FATALITY_HEADER.len()) {
        let (record, line) = item?;
        let row = Row { record: &record, line };
        let raw = row.field(0, "crash_type")?;
        let crash = CrashType::parse(raw).ok_or_else(|| row.err(format!("unknown crash_type `{raw}`")))?;
        let point = CurvePoint {
            speed_mph: row.number(1, "speed_mph")?,
            fatality_fraction: row.number(2, "fatality_fraction")?,
            n_obs: row.number(3, "n_obs")?,
        };
        point.validate().map_err(|e| row.err(e.to_string()))?;
        out.push((crash, point));
    }
    Ok(out)
}

pub fn write_fatality_points<W: Write>(output: W, points: &[(CrashType, CurvePoint)]) -> Result<()> {
    let mut w = writer(output);
    w.write_record(FATALITY_HEADER)?;
    for (crash, p) in points {
        w.write_record([
            crash.as_str().to_string(),
            p.speed_mph.to_string(),
            p.fatality_fraction.to_string(),
            p.n_obs.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn read_lowfi_records(path: &Path, zones: &[u32]) -> Result<Vec<SpeedRecord>> {
    parse_lowfi_records(open(path)?, zones)
}

pub fn read_hifi_bins(path: &Path, zones: &[u32], bin_width: f64) -> Result<Vec<BinnedZoneCount>> {
    parse_hifi_bins(open(path)?, zones, bin_width)
}

pub fn read_fatality_points(path: &Path) -> Result<Vec<(CrashType, CurvePoint)>> {
    parse_fatality_points(open(path)?)
}

/// Baseline speeds per zone from either a record CSV or a binned count CSV,
/// chosen by the file's header. Binned vehicles sit at their bin centers.
pub fn read_speed_samples(path: &Path, zones: &[u32], bin_width: f64) -> Result<BTreeMap<u32, Vec<f64>>> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or_default().trim();
    if first == HIFI_HEADER.join(",") {
        let bins = parse_hifi_bins(text.as_bytes(), zones, bin_width)?;
        Ok(expand_bin_centers(&bins, bin_width))
    } else {
        let records = parse_lowfi_records(text.as_bytes(), zones)?;
        Ok(speeds_by_zone(&records, Condition::Baseline))
    }
}
