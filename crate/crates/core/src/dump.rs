//! Descriptor dump files: one record per patch.
//!
//! ```text
//! # kind=real source=spgrbm normalization=none width=64 threshold=none p_scale=1 model=<sha256>
//! 0 0.12 0.98 ...
//! 1 0.03 0.77 ...
//! ```
//!
//! Binary dumps (`kind=binary`) hold one hex bitset per row, least
//! significant bit of each byte first. The header line is optional: without
//! it rows are read as real values from an external tool, with the patch id
//! as the first field. `ids=implicit` in a header means rows carry no id and
//! are numbered from 0 in file order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::descriptor::{BinaryDescriptor, Descriptor, Normalization, Source};
use crate::error::Error;
use crate::eval::DescriptorSet;

#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub binary: bool,
    pub source: Source,
    pub normalization: Normalization,
    pub width: usize,
    pub threshold: Option<f64>,
    pub p_scale: f64,
    pub model: Option<String>,
    /// Training scenes of the source model, `+`-joined.
    pub train: Option<String>,
    pub implicit_ids: bool,
}

impl DumpHeader {
    pub fn external(width: usize) -> Self {
        DumpHeader {
            binary: false,
            source: Source::External,
            normalization: Normalization::None,
            width,
            threshold: None,
            p_scale: 1.0,
            model: None,
            train: None,
            implicit_ids: false,
        }
    }

    fn to_line(&self) -> String {
        let mut s = format!(
            "# kind={} source={} normalization={} width={} threshold={} p_scale={}",
            if self.binary { "binary" } else { "real" },
            self.source.code(),
            self.normalization.code(),
            self.width,
            self.threshold.map_or("none".to_string(), |t| t.to_string()),
            self.p_scale,
        );
        if let Some(m) = &self.model {
            let _ = write!(s, " model={m}");
        }
        if let Some(t) = &self.train {
            let _ = write!(s, " train={t}");
        }
        if self.implicit_ids {
            s.push_str(" ids=implicit");
        }
        s
    }

    fn parse(line: &str) -> std::result::Result<DumpHeader, String> {
        let mut h = DumpHeader::external(0);
        let mut width = None;
        for tok in line.trim_start_matches('#').split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("header token {tok:?} is not key=value"))?;
            match k {
                "kind" => {
                    h.binary = match v {
                        "real" => false,
                        "binary" => true,
                        _ => return Err(format!("kind must be real or binary, got {v:?}")),
                    }
                }
                "source" => h.source = v.parse().map_err(|e: Error| e.to_string())?,
                "normalization" => h.normalization = v.parse().map_err(|e: Error| e.to_string())?,
                "width" => width = Some(v.parse::<usize>().map_err(|e| format!("width: {e}"))?),
                "threshold" => {
                    h.threshold = match v {
                        "none" => None,
                        _ => Some(v.parse().map_err(|e| format!("threshold: {e}"))?),
                    }
                }
                "p_scale" => h.p_scale = v.parse().map_err(|e| format!("p_scale: {e}"))?,
                "model" => h.model = Some(v.to_string()),
                "train" => h.train = Some(v.to_string()),
                "ids" => {
                    h.implicit_ids = match v {
                        "implicit" => true,
                        "explicit" => false,
                        _ => return Err(format!("ids must be implicit or explicit, got {v:?}")),
                    }
                }
                _ => return Err(format!("unknown header key {k:?}")),
            }
        }
        h.width = width.ok_or("header lacks width")?;
        if h.width == 0 {
            return Err("width must be positive".into());
        }
        if h.binary && h.threshold.is_none() {
            return Err("binary dump without a threshold".into());
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDump {
    pub header: DumpHeader,
    pub descriptors: DescriptorSet,
}

impl DescriptorDump {
    pub fn to_text(&self) -> String {
        let mut s = self.header.to_line();
        s.push('\n');
        match &self.descriptors {
            DescriptorSet::Real(m) => {
                for (id, d) in m {
                    let _ = write!(s, "{id}");
                    for v in &d.values {
                        let _ = write!(s, " {v}");
                    }
                    s.push('\n');
                }
            }
            DescriptorSet::Binary(m) => {
                for (id, d) in m {
                    let _ = writeln!(s, "{id} {}", d.to_hex());
                }
            }
        }
        s
    }

    /// Parses a dump. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> std::result::Result<DescriptorDump, (usize, String)> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut header = None;
        let mut rows: Vec<(usize, &str)> = Vec::new();
        for (no, line) in lines.by_ref() {
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if header.is_none() && rows.is_empty() && line.contains('=') {
                    header = Some(DumpHeader::parse(line).map_err(|m| (no, m))?);
                }
                continue;
            }
            rows.push((no, line));
        }
        let external = header.is_none();
        let mut header = match header {
            Some(h) => h,
            None => {
                let Some((_, first)) = rows.first() else {
                    return Err((1, "empty descriptor dump".into()));
                };
                let n = first.split_whitespace().count();
                if n < 2 {
                    return Err((rows[0].0, "row has no values".into()));
                }
                DumpHeader::external(n - 1)
            }
        };
        let mut next_implicit = 0usize;
        let mut id_of = |no: usize,
                         fields: &mut std::str::SplitWhitespace<'_>|
         -> std::result::Result<usize, (usize, String)> {
            if header.implicit_ids {
                next_implicit += 1;
                Ok(next_implicit - 1)
            } else {
                let f = fields.next().ok_or((no, "empty row".to_string()))?;
                f.parse()
                    .map_err(|_| (no, format!("patch id {f:?} is not a non-negative integer")))
            }
        };
        let descriptors = if header.binary {
            let mut m = BTreeMap::new();
            for &(no, line) in &rows {
                let mut fields = line.split_whitespace();
                let id = id_of(no, &mut fields)?;
                let hex = fields.next().ok_or((no, "missing bitset".to_string()))?;
                if fields.next().is_some() {
                    return Err((no, "extra fields after the bitset".into()));
                }
                let d = BinaryDescriptor::from_hex(hex, header.width)
                    .map_err(|e| (no, e.to_string()))?;
                if m.insert(id, d).is_some() {
                    return Err((no, format!("duplicate patch id {id}")));
                }
            }
            DescriptorSet::Binary(m)
        } else {
            let mut m = BTreeMap::new();
            for &(no, line) in &rows {
                let mut fields = line.split_whitespace();
                let id = id_of(no, &mut fields)?;
                let values = fields
                    .map(|f| match f.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err((no, format!("value {f:?} is not a finite number"))),
                    })
                    .collect::<std::result::Result<Vec<f64>, _>>()?;
                if values.len() != header.width {
                    return Err((
                        no,
                        format!("{} values, expected {}", values.len(), header.width),
                    ));
                }
                let mut d = Descriptor::new(values, header.source);
                d.normalization = header.normalization;
                if m.insert(id, d).is_some() {
                    return Err((no, format!("duplicate patch id {id}")));
                }
            }
            DescriptorSet::Real(m)
        };
        if descriptors.is_empty() {
            return Err((1, "descriptor dump has no rows".into()));
        }
        if external {
            header.source = Source::External;
        }
        Ok(DescriptorDump {
            header,
            descriptors,
        })
    }
}
