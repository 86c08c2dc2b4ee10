use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

use super::LinkId;
use crate::sched::Micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t_s: f64,
    /// Total packet_in per second reaching controllers.
    pub packet_in_rate: f64,
    /// Busiest controller's busy fraction.
    pub controller_load: f64,
    pub link_rates: BTreeMap<LinkId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub t_us: Micros,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub rows: Vec<MetricsRow>,
    pub annotations: Vec<Annotation>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    t_s: f64,
    packet_in_rate: f64,
    controller_load: f64,
    link_id: &'a str,
    byte_rate: f64,
}

impl MetricsTrace {
    /// Appends a row; rejects it unless time strictly increases.
    pub fn push(&mut self, mut row: MetricsRow) -> bool {
        if self.rows.last().is_some_and(|last| last.t_s >= row.t_s) {
            return false;
        }
        row.controller_load = row.controller_load.clamp(0.0, 1.0);
        self.rows.push(row);
        true
    }

    pub fn annotate(&mut self, t_us: Micros, label: impl Into<String>) {
        self.annotations.push(Annotation { t_us, label: label.into() });
    }

    pub fn first_annotation(&self, prefix: &str) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.label.starts_with(prefix))
    }

    /// Rows with t_s in [from_s, to_s].
    pub fn between(&self, from_s: f64, to_s: f64) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.t_s >= from_s && r.t_s <= to_s)
    }

    pub fn mean_packet_in(&self, from_s: f64, to_s: f64) -> f64 {
        mean(self.between(from_s, to_s).map(|r| r.packet_in_rate))
    }

    pub fn mean_load(&self, from_s: f64, to_s: f64) -> f64 {
        mean(self.between(from_s, to_s).map(|r| r.controller_load))
    }

    pub fn peak_packet_in(&self) -> f64 {
        self.rows.iter().map(|r| r.packet_in_rate).fold(0.0, f64::max)
    }

    /// One CSV line per (time, link); rows without links get an empty link id.
    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            let base = |link_id, byte_rate| CsvRow {
                t_s: r.t_s,
                packet_in_rate: r.packet_in_rate,
                controller_load: r.controller_load,
                link_id,
                byte_rate,
            };
            if r.link_rates.is_empty() {
                out.serialize(base("", 0.0))?;
            }
            for (l, b) in &r.link_rates {
                out.serialize(base(l, *b))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
