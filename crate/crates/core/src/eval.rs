//! One-pass evaluation metrics and report files.
//!
//! Precision at threshold `τ` counts frames whose centre error is at most
//! `τ` pixels. Success at threshold `θ` counts frames whose IoU is
//! strictly greater than `θ`, so IoU 0 never succeeds and IoU 1 fails at
//! `θ = 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::geometry::BBox;

pub const PRECISION_THRESHOLDS: usize = 51;
pub const SUCCESS_THRESHOLDS: usize = 21;
pub const HEADLINE_PIXELS: usize = 20;
pub const CSV_HEADER: &str = "sequence,frames,precision20,auc,fps";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{pred} predicted boxes for {gt} ground-truth boxes")]
    Length { pred: usize, gt: usize },
    #[error("no frames to evaluate")]
    Empty,
    #[error("no timed frames or non-positive total time")]
    NoTimings,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check(pred: &[BBox], gt: &[BBox]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Length { pred: pred.len(), gt: gt.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn success_threshold(k: usize) -> f64 {
    k as f64 / (SUCCESS_THRESHOLDS - 1) as f64
}

/// Precision at `0..=50` pixels and the value at 20 pixels.
pub fn precision_curve(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64), EvalError> {
    check(pred, gt)?;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect();
    let n = errors.len() as f64;
    let curve: Vec<f64> =
        (0..PRECISION_THRESHOLDS).map(|t| errors.iter().filter(|&&e| e <= t as f64).count() as f64 / n).collect();
    let headline = curve[HEADLINE_PIXELS];
    Ok((curve, headline))
}

/// Success at IoU thresholds `0, 0.05, ..., 1` and its mean.
pub fn success_auc(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64), EvalError> {
    check(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let n = ious.len() as f64;
    let curve: Vec<f64> = (0..SUCCESS_THRESHOLDS)
        .map(|k| {
            let th = success_threshold(k);
            ious.iter().filter(|&&v| v > th).count() as f64 / n
        })
        .collect();
    let auc = curve.iter().sum::<f64>() / curve.len() as f64;
    Ok((curve, auc))
}

/// Timed frames divided by their total duration in seconds.
pub fn fps_report(times: &[f64]) -> Result<f64, EvalError> {
    let total: f64 = times.iter().sum();
    if times.is_empty() || total <= 0.0 || total.is_nan() || !total.is_finite() {
        return Err(EvalError::NoTimings);
    }
    Ok(times.len() as f64 / total)
}

/// Metrics of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub sequence: String,
    pub frames: usize,
    pub precision: Vec<f64>,
    pub success: Vec<f64>,
    pub precision20: f64,
    pub auc: f64,
    pub fps: Option<f64>,
}

pub fn evaluate(sequence: &str, pred: &[BBox], gt: &[BBox], times: Option<&[f64]>) -> Result<EvalResult, EvalError> {
    let (precision, precision20) = precision_curve(pred, gt)?;
    let (success, auc) = success_auc(pred, gt)?;
    let fps = times.map(fps_report).transpose()?;
    Ok(EvalResult { sequence: sequence.to_string(), frames: pred.len(), precision, success, precision20, auc, fps })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Sequence-averaged curves, headline numbers and FPS.
pub fn overall(results: &[EvalResult]) -> Result<EvalResult, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let avg_curve = |f: fn(&EvalResult) -> &Vec<f64>| {
        let len = f(&results[0]).len();
        (0..len).map(|i| mean(results.iter().map(|r| f(r)[i]))).collect::<Vec<_>>()
    };
    let fps = if results.iter().all(|r| r.fps.is_some()) {
        Some(mean(results.iter().map(|r| r.fps.unwrap_or(0.0))))
    } else {
        None
    };
    Ok(EvalResult {
        sequence: "overall".into(),
        frames: results.iter().map(|r| r.frames).sum(),
        precision: avg_curve(|r| &r.precision),
        success: avg_curve(|r| &r.success),
        precision20: mean(results.iter().map(|r| r.precision20)),
        auc: mean(results.iter().map(|r| r.auc)),
        fps,
    })
}

/// CSV report with one row per sequence followed by the overall row.
pub fn report_csv(results: &[EvalResult]) -> Result<String, EvalError> {
    let mut s = format!("{CSV_HEADER}\n");
    for r in results.iter().chain(std::iter::once(&overall(results)?)) {
        let fps = r.fps.map(|f| format!("{f:.3}")).unwrap_or_default();
        writeln!(s, "{},{},{:.6},{:.6},{}", r.sequence, r.frames, r.precision20, r.auc, fps).expect("string write");
    }
    Ok(s)
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot with x in `[0, x_max]` and y in `[0, 1]`.
fn svg_plot(title: &str, x_label: &str, x_max: f64, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + x / x_max * pw;
    let py = |y: f64| H - MARGIN - y * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="16">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><line x1="{0}" y1="{1}" x2="{0}" y2="{3}" stroke="black"/>"#,
        MARGIN,
        H - MARGIN,
        W - MARGIN,
        MARGIN
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            px(f * x_max),
            H - MARGIN + 16.0,
            f * x_max
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{:.1}</text>"#,
            MARGIN - 6.0,
            py(f) + 4.0,
            f
        );
    }
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#, W / 2.0, H - 12.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let ly = MARGIN + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="{color}" stroke-width="2"/><text x="{3:.1}" y="{4:.1}" font-size="11">{name}</text>"#,
            W - MARGIN - 150.0,
            ly,
            W - MARGIN - 130.0,
            W - MARGIN - 125.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn precision_svg(results: &[EvalResult]) -> Result<String, EvalError> {
    let all = overall(results)?;
    let series = vec![(
        format!("overall [{:.3}]", all.precision20),
        all.precision.iter().enumerate().map(|(t, &v)| (t as f64, v)).collect(),
    )];
    Ok(svg_plot("Precision plot", "location error threshold (px)", (PRECISION_THRESHOLDS - 1) as f64, &series))
}

pub fn success_svg(results: &[EvalResult]) -> Result<String, EvalError> {
    let all = overall(results)?;
    let series = vec![(
        format!("overall [{:.3}]", all.auc),
        all.success.iter().enumerate().map(|(k, &v)| (success_threshold(k), v)).collect(),
    )];
    Ok(svg_plot("Success plot (IoU > threshold)", "overlap threshold", 1.0, &series))
}

/// Writes `report.csv`, `precision_plot.svg` and `success_plot.svg` into `dir`.
pub fn write_reports(results: &[EvalResult], dir: &Path) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, body) in [
        ("report.csv", report_csv(results)?),
        ("precision_plot.svg", precision_svg(results)?),
        ("success_plot.svg", success_svg(results)?),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io(&p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64) -> BBox {
        BBox::new(x, y, 10.0, 10.0)
    }

    #[test]
    fn perfect_tracking() {
        let gt = vec![b(0.0, 0.0), b(5.0, 5.0)];
        let (_, p20) = precision_curve(&gt, &gt).unwrap();
        assert_eq!(p20, 1.0);
        let (curve, auc) = success_auc(&gt, &gt).unwrap();
        assert_eq!(curve[20], 0.0);
        assert!((auc - 20.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn errors_five_twentyfive_ten() {
        let gt = vec![b(0.0, 0.0); 3];
        let pred = vec![b(5.0, 0.0), b(25.0, 0.0), b(0.0, 10.0)];
        let (_, p20) = precision_curve(&pred, &gt).unwrap();
        assert!((p20 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_boxes_have_zero_auc() {
        let gt = vec![b(0.0, 0.0)];
        let (_, auc) = success_auc(&[b(100.0, 100.0)], &gt).unwrap();
        assert_eq!(auc, 0.0);
    }

    #[test]
    fn fps_arithmetic() {
        assert!((fps_report(&[0.01; 100]).unwrap() - 100.0).abs() < 1e-9);
        assert!(fps_report(&[]).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(precision_curve(&[b(0.0, 0.0)], &[]), Err(EvalError::Length { .. })));
    }
}
