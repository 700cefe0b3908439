//! MRtrix `.tck` streamline files and the plain-text label sidecar that
//! carries per-streamline classes alongside them.
//!
//! A TCK file is a text header (`mrtrix tracks` ... `END`) followed, at the
//! byte offset named by the `file: . <offset>` entry, by a flat run of
//! 3-component vertices. An all-NaN vertex closes a streamline and an
//! all-Inf vertex closes the file.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::streamline::{Labels, Point, Streamline, Tractogram};

const MAGIC: &str = "mrtrix tracks";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Float32LE,
    Float32BE,
    Float64LE,
    Float64BE,
}

impl Datatype {
    pub fn width(self) -> usize {
        match self {
            Datatype::Float32LE | Datatype::Float32BE => 4,
            Datatype::Float64LE | Datatype::Float64BE => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Datatype::Float32LE => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Datatype::Float32BE => f32::from_be_bytes(b.try_into().unwrap()) as f64,
            Datatype::Float64LE => f64::from_le_bytes(b.try_into().unwrap()),
            Datatype::Float64BE => f64::from_be_bytes(b.try_into().unwrap()),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) -> Result<()> {
        match self {
            Datatype::Float32LE | Datatype::Float32BE => {
                if v.is_finite() && v.abs() > f32::MAX as f64 {
                    return Err(Error::NotRepresentable(v));
                }
                let f = v as f32;
                if self == Datatype::Float32LE {
                    out.extend_from_slice(&f.to_le_bytes());
                } else {
                    out.extend_from_slice(&f.to_be_bytes());
                }
            }
            Datatype::Float64LE => out.extend_from_slice(&v.to_le_bytes()),
            Datatype::Float64BE => out.extend_from_slice(&v.to_be_bytes()),
        }
        Ok(())
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Datatype::Float32LE => "Float32LE",
            Datatype::Float32BE => "Float32BE",
            Datatype::Float64LE => "Float64LE",
            Datatype::Float64BE => "Float64BE",
        };
        f.write_str(s)
    }
}

impl FromStr for Datatype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Float32LE" => Ok(Datatype::Float32LE),
            "Float32BE" => Ok(Datatype::Float32BE),
            "Float64LE" => Ok(Datatype::Float64LE),
            "Float64BE" => Ok(Datatype::Float64BE),
            other => Err(Error::UnknownDatatype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TckHeader {
    /// Every `key: value` line in file order, including the ones parsed
    /// into the typed fields below.
    pub entries: Vec<(String, String)>,
    pub datatype: Datatype,
    pub file_offset: usize,
    pub count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TckFile {
    pub header: TckHeader,
    pub tractogram: Tractogram,
    pub warnings: Vec<String>,
}

fn parse_header(bytes: &[u8]) -> Result<(TckHeader, usize)> {
    let mut pos = 0;
    let mut next_line = || -> Result<&[u8]> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or(Error::UnexpectedEof)?;
        pos += end + 1;
        let line = &rest[..end];
        Ok(line.strip_suffix(b"\r").unwrap_or(line))
    };
    let magic = next_line().map_err(|_| Error::NotTck)?;
    if magic != MAGIC.as_bytes() {
        return Err(Error::NotTck);
    }
    let mut entries = Vec::new();
    loop {
        let line = next_line()?;
        let line = std::str::from_utf8(line).map_err(|_| Error::BadHeader("non-UTF-8 header line".into()))?;
        if line == "END" {
            break;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| Error::BadHeader(format!("expected `key: value`, got {line:?}")))?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    let header_end = pos;
    let get = |key: &str| entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

    let datatype = get("datatype")
        .ok_or_else(|| Error::BadHeader("missing datatype".into()))?
        .parse()?;
    let file = get("file").ok_or_else(|| Error::BadHeader("missing file entry".into()))?;
    let offset = file
        .strip_prefix('.')
        .map(str::trim)
        .and_then(|o| o.parse::<usize>().ok())
        .ok_or_else(|| Error::BadHeader(format!("unsupported file entry {file:?}")))?;
    if offset < header_end {
        return Err(Error::BadHeader(format!("data offset {offset} lies inside the header")));
    }
    let count = match get("count") {
        Some(c) => Some(
            c.parse::<usize>()
                .map_err(|_| Error::BadHeader(format!("bad count {c:?}")))?,
        ),
        None => None,
    };
    Ok((TckHeader { entries, datatype, file_offset: offset, count }, header_end))
}

/// Parses a whole TCK byte buffer. Count mismatches are reported as
/// warnings rather than errors.
pub fn read_tck_file(bytes: &[u8]) -> Result<TckFile> {
    let (header, _) = parse_header(bytes)?;
    let data = bytes.get(header.file_offset..).ok_or(Error::UnexpectedEof)?;
    let width = header.datatype.width();
    let vertex = 3 * width;

    let mut streamlines = Vec::new();
    let mut current: Vec<Point> = Vec::new();
    let mut cursor = 0;
    loop {
        let chunk = data.get(cursor..cursor + vertex).ok_or(Error::UnexpectedEof)?;
        cursor += vertex;
        let p = [
            header.datatype.decode(&chunk[..width]),
            header.datatype.decode(&chunk[width..2 * width]),
            header.datatype.decode(&chunk[2 * width..]),
        ];
        if p.iter().all(|c| c.is_nan()) {
            let idx = streamlines.len();
            let pts = std::mem::take(&mut current);
            streamlines.push(Streamline::new(pts).map_err(|e| match e {
                Error::TooFewPoints(_) => Error::ShortStreamline(idx),
                other => other,
            })?);
        } else if p.iter().all(|c| c.is_infinite()) {
            break;
        } else {
            current.push(p);
        }
    }
    if !current.is_empty() {
        let idx = streamlines.len();
        streamlines.push(Streamline::new(current).map_err(|_| Error::ShortStreamline(idx))?);
    }

    let mut warnings = Vec::new();
    if let Some(count) = header.count {
        if count != streamlines.len() {
            let msg = format!("header declares count {count} but file holds {} streamlines", streamlines.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(TckFile { header, tractogram: Tractogram::new(streamlines), warnings })
}

pub fn read_tck(bytes: &[u8]) -> Result<Tractogram> {
    read_tck_file(bytes).map(|f| f.tractogram)
}

/// Serializes streamlines (labels are ignored; see [`write_labels`]).
pub fn write_tck(t: &Tractogram, datatype: Datatype) -> Result<Vec<u8>> {
    if t.is_empty() {
        return Err(Error::EmptyTractogram);
    }
    let head = format!("{MAGIC}\ndatatype: {datatype}\ncount: {}\nfile: . ", t.len());
    let tail = "\nEND\n";
    // The offset's own digit count feeds back into the header length.
    let mut offset = head.len() + tail.len() + 1;
    while head.len() + offset.to_string().len() + tail.len() != offset {
        offset = head.len() + offset.to_string().len() + tail.len();
    }
    let mut out = Vec::with_capacity(offset + 3 * datatype.width() * (t.streamlines.iter().map(|s| s.len() + 1).sum::<usize>() + 1));
    out.extend_from_slice(head.as_bytes());
    out.extend_from_slice(offset.to_string().as_bytes());
    out.extend_from_slice(tail.as_bytes());
    debug_assert_eq!(out.len(), offset);

    for s in &t.streamlines {
        for p in s.points() {
            for &c in p {
                datatype.encode(c, &mut out)?;
            }
        }
        for _ in 0..3 {
            datatype.encode(f64::NAN, &mut out)?;
        }
    }
    for _ in 0..3 {
        datatype.encode(f64::INFINITY, &mut out)?;
    }
    Ok(out)
}

const LABEL_MAGIC: &str = "tracto-labels 1";

/// Label sidecar contents: declared classes plus one label per streamline.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub labels: Labels,
}

/// Writes the sidecar:
///
/// ```text
/// tracto-labels 1
/// class AF_L
/// class CST_R
/// end
/// AF_L
/// AF_L
/// CST_R
/// ```
pub fn write_labels(labels: &Labels) -> String {
    let mut out = String::new();
    out.push_str(LABEL_MAGIC);
    out.push('\n');
    for c in &labels.class_names {
        out.push_str("class ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str("end\n");
    for &i in &labels.indices {
        out.push_str(&labels.class_names[i]);
        out.push('\n');
    }
    out
}

pub fn read_labels(text: &str) -> Result<Labels> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    match lines.next() {
        Some((_, l)) if l == LABEL_MAGIC => {}
        _ => return Err(Error::Label("missing `tracto-labels 1` header".into())),
    }
    let mut class_names: Vec<String> = Vec::new();
    let mut closed = false;
    for (lineno, line) in lines.by_ref() {
        if line == "end" {
            closed = true;
            break;
        }
        let name = line
            .strip_prefix("class ")
            .ok_or_else(|| Error::Label(format!("line {lineno}: expected `class <name>` or `end`")))?;
        if name.is_empty() {
            return Err(Error::Label(format!("line {lineno}: empty class name")));
        }
        if class_names.iter().any(|c| c == name) {
            return Err(Error::DuplicateClass(name.to_string()));
        }
        class_names.push(name.to_string());
    }
    if !closed {
        return Err(Error::Label("class block not terminated by `end`".into()));
    }
    let mut indices = Vec::new();
    let rest: Vec<(usize, &str)> = lines.collect();
    let body = match rest.last() {
        Some((_, "")) => &rest[..rest.len() - 1],
        _ => &rest[..],
    };
    for &(lineno, line) in body {
        let idx = class_names
            .iter()
            .position(|c| c == line)
            .ok_or_else(|| Error::Label(format!("line {lineno}: label {line:?} is not a declared class")))?;
        indices.push(idx);
    }
    Labels::new(class_names, indices)
}

/// Attaches sidecar labels to an unlabeled tractogram.
pub fn attach_labels(mut t: Tractogram, labels: Labels) -> Result<Tractogram> {
    if labels.indices.len() != t.len() {
        return Err(Error::Label(format!(
            "label file has {} labels but tractogram has {} streamlines",
            labels.indices.len(),
            t.len()
        )));
    }
    t.labels = Some(labels);
    Ok(t)
}

pub fn read_labeled(tck: &[u8], labels: &str) -> Result<Tractogram> {
    attach_labels(read_tck(tck)?, read_labels(labels)?)
}

/// Serializes a labeled tractogram to (TCK bytes, sidecar text).
pub fn write_labeled(t: &Tractogram, datatype: Datatype) -> Result<(Vec<u8>, String)> {
    let labels = t.labels.as_ref().ok_or_else(|| Error::Label("tractogram is unlabeled".into()))?;
    Ok((write_tck(t, datatype)?, write_labels(labels)))
}
