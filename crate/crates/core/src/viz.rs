//! Standalone SVG charts and the JSON report.
//!
//! All output is a pure function of the inputs: coordinates use fixed decimal
//! formatting and colors come from a palette ordered by genre label.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::eval::AccuracyTable;
use crate::interpret::{GenreDistribution, GenreTimeline};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Proportions below this are left out of doughnut charts.
pub const MIN_ARC_PROPORTION: f64 = 0.001;

#[derive(Debug, Error, PartialEq)]
pub enum VizError {
    #[error("genre {0} has no palette color")]
    UnknownGenre(String),
    #[error("timeline needs at least 2 entries, got {0}")]
    TimelineTooShort(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("report JSON: {0}")]
    Json(String),
}

/// GTZAN genres in lexicographic order.
pub const GTZAN_GENRES: [&str; 10] = [
    "blues",
    "classical",
    "country",
    "disco",
    "hiphop",
    "jazz",
    "metal",
    "pop",
    "reggae",
    "rock",
];

/// Paul Tol's colorblind-safe "muted" scheme.
const COLORS: [&str; 10] = [
    "#332288", "#88CCEE", "#44AA99", "#117733", "#999933", "#DDCC77", "#CC6677", "#882255",
    "#AA4499", "#DDDDDD",
];

/// Genre → hex color, iterated in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    colors: BTreeMap<String, String>,
}

impl Palette {
    pub fn gtzan() -> Self {
        Palette {
            colors: GTZAN_GENRES
                .iter()
                .zip(COLORS)
                .map(|(g, c)| (g.to_string(), c.to_string()))
                .collect(),
        }
    }

    /// GTZAN genres keep their fixed colors; any other label takes the next
    /// unused color, then a generated hue once the scheme is exhausted.
    pub fn for_genres<'a, I: IntoIterator<Item = &'a str>>(genres: I) -> Self {
        let fixed = Palette::gtzan();
        let mut genres: Vec<&str> = genres.into_iter().collect();
        genres.sort_unstable();
        genres.dedup();
        let mut used: Vec<&str> = genres.iter().filter_map(|g| fixed.color(g)).collect();
        let mut spare = COLORS
            .iter()
            .filter(|c| !used.contains(c))
            .copied()
            .collect::<Vec<_>>()
            .into_iter();
        let mut extra = 0usize;
        let mut colors = BTreeMap::new();
        for g in genres {
            let c = match fixed.color(g) {
                Some(c) => c.to_string(),
                None => match spare.next() {
                    Some(c) => {
                        used.push(c);
                        c.to_string()
                    }
                    None => {
                        extra += 1;
                        hue_color(extra)
                    }
                },
            };
            colors.insert(g.to_string(), c);
        }
        Palette { colors }
    }

    pub fn color(&self, genre: &str) -> Option<&str> {
        self.colors.get(genre).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.colors.iter().map(|(g, c)| (g.as_str(), c.as_str()))
    }
}

/// Golden-angle hue walk at fixed saturation and lightness.
fn hue_color(i: usize) -> String {
    let h = (i as f64 * 137.508) % 360.0;
    let (s, l) = (0.55, 0.5);
    let c = (1.0 - (2.0 * l - 1.0f64).abs()) * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = l - c / 2.0;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to = |v: f64| ((v + m) * 255.0).round() as u8;
    format!("#{:02X}{:02X}{:02X}", to(r), to(g), to(b))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Optional decorations shared by both chart kinds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChartMeta {
    pub title: Option<String>,
    /// Free-form provenance text written into `<metadata>`.
    pub stamp: Option<String>,
}

fn svg_open(out: &mut String, width: f64, height: f64, meta: &ChartMeta) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    if let Some(stamp) = &meta.stamp {
        let _ = writeln!(out, "<metadata>{}</metadata>", xml_escape(stamp));
    }
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="#FFFFFF"/>"##
    );
    if let Some(title) = &meta.title {
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="16" text-anchor="middle" font-size="14">{}</text>"#,
            width / 2.0,
            xml_escape(title)
        );
    }
}

fn polar(cx: f64, cy: f64, r: f64, deg: f64) -> (f64, f64) {
    let rad = deg.to_radians();
    (cx + r * rad.sin(), cy - r * rad.cos())
}

/// Proportions actually drawn: tiny ones dropped, the rest renormalized, in
/// palette (label) order.
pub fn doughnut_segments(
    distribution: &GenreDistribution,
    palette: &Palette,
) -> Result<Vec<(String, f64)>, VizError> {
    for g in distribution.genres() {
        if palette.color(g).is_none() {
            return Err(VizError::UnknownGenre(g.to_string()));
        }
    }
    let kept: Vec<(&str, f64)> = distribution
        .iter()
        .filter(|(_, p)| *p >= MIN_ARC_PROPORTION)
        .collect();
    let total: f64 = kept.iter().map(|(_, p)| p).sum();
    if !(total > 0.0) {
        return Err(VizError::InvalidArgument(
            "distribution has no drawable mass".into(),
        ));
    }
    Ok(kept
        .into_iter()
        .map(|(g, p)| (g.to_string(), p / total))
        .collect())
}

pub fn doughnut_svg(
    distribution: &GenreDistribution,
    palette: &Palette,
    size_px: u32,
) -> Result<String, VizError> {
    doughnut_svg_with(distribution, palette, size_px, &ChartMeta::default())
}

/// Ring chart, one annular arc per genre, clockwise from 12 o'clock. Each
/// arc path carries `data-genre` and `data-sweep` (degrees).
pub fn doughnut_svg_with(
    distribution: &GenreDistribution,
    palette: &Palette,
    size_px: u32,
    meta: &ChartMeta,
) -> Result<String, VizError> {
    if size_px == 0 {
        return Err(VizError::InvalidArgument("size_px must be positive".into()));
    }
    let segments = doughnut_segments(distribution, palette)?;
    let size = size_px as f64;
    let legend_w = 170.0;
    let legend_h = 24.0 + 20.0 * segments.len() as f64;
    let top = if meta.title.is_some() { 24.0 } else { 0.0 };
    let width = size + legend_w;
    let height = (size + top).max(legend_h + top);
    let (cx, cy) = (size / 2.0, top + size / 2.0);
    let outer = 0.45 * size;
    let inner = 0.6 * outer;

    let mut out = String::new();
    svg_open(&mut out, width, height, meta);
    out.push_str("<g class=\"doughnut\">\n");
    let mut start = 0.0f64;
    for (genre, p) in &segments {
        let sweep = p * 360.0;
        let color = palette.color(genre).expect("checked above");
        // SVG cannot draw a closed ring as one arc; split at 180 degrees
        let pieces: Vec<(f64, f64)> = if sweep >= 360.0 - 1e-9 {
            vec![(start, 180.0), (start + 180.0, 180.0)]
        } else {
            vec![(start, sweep)]
        };
        for (a0, s) in pieces {
            let a1 = a0 + s;
            let large = if s > 180.0 { 1 } else { 0 };
            let (ox0, oy0) = polar(cx, cy, outer, a0);
            let (ox1, oy1) = polar(cx, cy, outer, a1);
            let (ix1, iy1) = polar(cx, cy, inner, a1);
            let (ix0, iy0) = polar(cx, cy, inner, a0);
            let _ = writeln!(
                out,
                r##"<path data-genre="{g}" data-sweep="{s:.9}" fill="{color}" stroke="#FFFFFF" stroke-width="1" d="M {ox0:.3} {oy0:.3} A {outer:.3} {outer:.3} 0 {large} 1 {ox1:.3} {oy1:.3} L {ix1:.3} {iy1:.3} A {inner:.3} {inner:.3} 0 {large} 0 {ix0:.3} {iy0:.3} Z"/>"##,
                g = xml_escape(genre),
            );
        }
        start += sweep;
    }
    out.push_str("</g>\n<g class=\"legend\">\n");
    for (i, (genre, p)) in segments.iter().enumerate() {
        let y = top + 20.0 + 20.0 * i as f64;
        let color = palette.color(genre).expect("checked above");
        let _ = writeln!(
            out,
            r#"<rect x="{:.3}" y="{:.3}" width="12" height="12" fill="{color}"/>"#,
            size + 10.0,
            y - 10.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{y:.3}">{} {:.1}%</text>"#,
            size + 28.0,
            xml_escape(genre),
            p * 100.0
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

pub fn timeline_svg(
    timeline: &GenreTimeline,
    palette: &Palette,
    width_px: u32,
    height_px: u32,
) -> Result<String, VizError> {
    timeline_svg_with(
        timeline,
        palette,
        width_px,
        height_px,
        &ChartMeta::default(),
    )
}

/// Plot area of a timeline chart: (left, top, width, height).
pub fn timeline_plot_area(width_px: u32, height_px: u32, titled: bool) -> (f64, f64, f64, f64) {
    let top = if titled { 30.0 } else { 12.0 };
    let (left, right, bottom) = (52.0, 130.0, 44.0);
    (
        left,
        top,
        (width_px as f64 - left - right).max(1.0),
        (height_px as f64 - top - bottom).max(1.0),
    )
}

fn tick_step(span: f64) -> f64 {
    const STEPS: [f64; 12] = [
        0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 30.0, 60.0, 120.0, 300.0,
    ];
    STEPS
        .iter()
        .copied()
        .find(|s| span / s <= 10.0)
        .unwrap_or(600.0)
}

/// Stacked-area chart of genre proportions over time. Each band is a
/// `polygon` with `data-genre`; its points run along the upper boundary left
/// to right, then along the lower boundary right to left.
pub fn timeline_svg_with(
    timeline: &GenreTimeline,
    palette: &Palette,
    width_px: u32,
    height_px: u32,
    meta: &ChartMeta,
) -> Result<String, VizError> {
    let n = timeline.entries.len();
    if n < 2 {
        return Err(VizError::TimelineTooShort(n));
    }
    if width_px == 0 || height_px == 0 {
        return Err(VizError::InvalidArgument(
            "chart size must be positive".into(),
        ));
    }
    let genres: Vec<&str> = timeline.genres().into_iter().collect();
    for g in &genres {
        if palette.color(g).is_none() {
            return Err(VizError::UnknownGenre(g.to_string()));
        }
    }
    let (left, top, pw, ph) = timeline_plot_area(width_px, height_px, meta.title.is_some());
    let t0 = timeline.entries[0].start_time;
    let t1 = timeline.entries[n - 1].start_time;
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(VizError::InvalidArgument(
            "start times must increase".into(),
        ));
    }
    let xs: Vec<f64> = timeline
        .entries
        .iter()
        .map(|e| left + (e.start_time - t0) / span * pw)
        .collect();
    let y_of = |cum: f64| top + ph * (1.0 - cum);

    let mut out = String::new();
    svg_open(&mut out, width_px as f64, height_px as f64, meta);
    out.push_str("<g class=\"bands\">\n");
    let mut lower = vec![0.0f64; n];
    for g in &genres {
        let upper: Vec<f64> = lower
            .iter()
            .zip(&timeline.entries)
            .map(|(l, e)| l + e.distribution.get(g))
            .collect();
        let mut pts = String::new();
        for (x, u) in xs.iter().zip(&upper) {
            let _ = write!(pts, "{x:.3},{:.3} ", y_of(*u));
        }
        for (x, l) in xs.iter().zip(&lower).rev() {
            let _ = write!(pts, "{x:.3},{:.3} ", y_of(*l));
        }
        let _ = writeln!(
            out,
            r#"<polygon data-genre="{}" fill="{}" stroke="none" points="{}"/>"#,
            xml_escape(g),
            palette.color(g).expect("checked above"),
            pts.trim_end()
        );
        lower = upper;
    }
    out.push_str("</g>\n<g class=\"axes\" stroke=\"#000000\" fill=\"none\">\n");
    let bottom = top + ph;
    let _ = writeln!(
        out,
        r#"<line x1="{left:.3}" y1="{bottom:.3}" x2="{:.3}" y2="{bottom:.3}"/>"#,
        left + pw
    );
    let _ = writeln!(
        out,
        r#"<line x1="{left:.3}" y1="{top:.3}" x2="{left:.3}" y2="{bottom:.3}"/>"#
    );
    out.push_str("</g>\n<g class=\"ticks\">\n");
    let step = tick_step(span);
    let first = (t0 / step).ceil() as i64;
    let last = (t1 / step + 1e-9).floor() as i64;
    for i in first..=last {
        let t = i as f64 * step;
        let x = left + (t - t0) / span * pw;
        let _ = writeln!(
            out,
            r##"<line x1="{x:.3}" y1="{bottom:.3}" x2="{x:.3}" y2="{:.3}" stroke="#000000"/><text x="{x:.3}" y="{:.3}" text-anchor="middle">{t:.1}</text>"##,
            bottom + 4.0,
            bottom + 16.0
        );
    }
    for i in 0..=4 {
        let p = i as f64 * 0.25;
        let y = y_of(p);
        let _ = writeln!(
            out,
            r##"<line x1="{:.3}" y1="{y:.3}" x2="{left:.3}" y2="{y:.3}" stroke="#000000"/><text x="{:.3}" y="{:.3}" text-anchor="end">{p:.2}</text>"##,
            left - 4.0,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">time (s)</text>"#,
        left + pw / 2.0,
        bottom + 34.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.3}" text-anchor="middle" transform="rotate(-90 14 {:.3})">genre proportion</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    out.push_str("</g>\n<g class=\"legend\">\n");
    for (i, g) in genres.iter().enumerate() {
        let y = top + 14.0 + 20.0 * i as f64;
        let x = left + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.3}" y="{:.3}" width="12" height="12" fill="{}"/><text x="{:.3}" y="{y:.3}">{}</text>"#,
            y - 10.0,
            palette.color(g).expect("checked above"),
            x + 18.0,
            xml_escape(g)
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Provenance attached to persisted artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

/// Contents of the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub bucket_id: u8,
    pub topics: BTreeMap<String, GenreDistribution>,
    pub documents: BTreeMap<String, GenreDistribution>,
    pub terms: BTreeMap<String, GenreDistribution>,
    pub accuracy_table: Option<AccuracyTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<Stamp>,
}

impl Report {
    pub fn new(
        bucket_id: u8,
        topics: &[GenreDistribution],
        documents: BTreeMap<String, GenreDistribution>,
        terms: &[GenreDistribution],
        accuracy_table: Option<AccuracyTable>,
    ) -> Self {
        let indexed = |v: &[GenreDistribution]| {
            v.iter()
                .enumerate()
                .map(|(i, d)| (i.to_string(), d.clone()))
                .collect()
        };
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            bucket_id,
            topics: indexed(topics),
            documents,
            terms: indexed(terms),
            accuracy_table,
            stamp: None,
        }
    }
}

/// Round to 12 significant digits.
fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn rebuild(value: Value, round: bool) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, rebuild(v, round));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(|v| rebuild(v, round)).collect()),
        Value::Number(n) if round && n.is_f64() => {
            let x = round_sig12(n.as_f64().expect("f64 number"));
            Number::from_f64(x)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        other => other,
    }
}

/// Sort object keys recursively, leaving numbers untouched.
pub fn sort_keys(value: Value) -> Value {
    rebuild(value, false)
}

/// Sort object keys and round every non-integer number to 12 significant
/// digits.
pub fn canonicalize(value: Value) -> Value {
    rebuild(value, true)
}

/// Serialize any value in canonical form (sorted keys, 12 significant
/// digits, pretty printed, trailing newline).
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    let mut s = serde_json::to_string_pretty(&canonicalize(v)).expect("value serializes");
    s.push('\n');
    s
}

pub fn export_report_json(report: &Report) -> String {
    to_canonical_json(report)
}

pub fn parse_report_json(text: &str) -> Result<Report, VizError> {
    let r: Report = serde_json::from_str(text).map_err(|e| VizError::Json(e.to_string()))?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(VizError::Json(format!(
            "unsupported schema version {}",
            r.schema_version
        )));
    }
    Ok(r)
}
