//! Economic and fairness metrics of a solved game, and their CSV/SVG
//! renderings. Column layouts are described in `docs/formats.md`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{
    self, CallVector, Compliance, Scenario, ShiftVector, SolutionReport, SolverDiagnostics,
};

/// First line of every emitted table and figure.
pub const FORMAT_HEADER: &str = "# dr-stackelberg v1";

/// Relative tolerance separating full from partial compliance.
pub const COMPLIANCE_TOL: f64 = 1e-6;

pub const CSV_COLUMNS: [&str; 8] = [
    "consumer",
    "baseline",
    "call",
    "shift_fraction",
    "shifted_kwh",
    "compliance",
    "bill",
    "reward",
];

pub const SWEEP_COLUMNS: [&str; 4] = ["gamma", "achieved_kwh", "commission", "call_variance"];

pub const FIGURE_COLUMNS: [&str; 5] = ["series", "consumer", "baseline", "call", "shifted_kwh"];

pub fn build_report(
    scenario: &Scenario,
    calls: CallVector,
    shifts: ShiftVector,
    solver: SolverDiagnostics,
) -> Result<SolutionReport> {
    let n = scenario.len();
    model::check_len("calls", calls.len(), n)?;
    model::check_len("shifts", shifts.len(), n)?;

    let mut follower_objectives = Vec::with_capacity(n);
    let mut bills = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut shifted_kwh = Vec::with_capacity(n);
    let mut compliance = Vec::with_capacity(n);
    for (i, (c, (&s, &call))) in scenario
        .consumers
        .iter()
        .zip(shifts.as_slice().iter().zip(calls.as_slice()))
        .enumerate()
    {
        let (bill, reward) = model::bill_and_reward(scenario, i, s)?;
        follower_objectives.push(model::follower_objective(scenario, i, s)?);
        bills.push(bill);
        rewards.push(reward);
        let e = s * c.baseline;
        shifted_kwh.push(e);
        compliance.push(if (e - call).abs() <= COMPLIANCE_TOL * call.max(1.0) {
            Compliance::Full
        } else {
            Compliance::Partial
        });
    }
    let achieved_kwh: f64 = shifted_kwh.iter().sum();
    let leader_objective = model::leader_objective(scenario, &calls, &shifts)?;
    Ok(SolutionReport {
        leader_objective,
        follower_objectives,
        bills,
        rewards,
        shifted_kwh,
        compliance,
        commission: scenario.commission_per_kwh() * achieved_kwh,
        achieved_kwh,
        achievement_rate: achieved_kwh / scenario.target,
        call_variance: calls.variance(),
        calls,
        shifts,
        solver,
    })
}

/// Renders `v` with six significant digits, in the shortest decimal form
/// that parses back to the rounded value.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Serialize(e.to_string()))?;
    let body = String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))?;
    Ok(format!("{FORMAT_HEADER}\n{body}"))
}

fn ser(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

/// Per-consumer table with a `total` footer row.
pub fn to_csv(scenario: &Scenario, report: &SolutionReport) -> Result<String> {
    let n = scenario.len();
    model::check_len("report calls", report.calls.len(), n)?;
    let mut w = csv_writer();
    w.write_record(CSV_COLUMNS).map_err(ser)?;
    let calls = report.calls.as_slice();
    let shifts = report.shifts.as_slice();
    for (i, c) in scenario.consumers.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            sig6(c.baseline),
            sig6(calls[i]),
            sig6(shifts[i]),
            sig6(report.shifted_kwh[i]),
            report.compliance[i].to_string(),
            sig6(report.bills[i]),
            sig6(report.rewards[i]),
        ])
        .map_err(ser)?;
    }
    let full = report
        .compliance
        .iter()
        .filter(|c| **c == Compliance::Full)
        .count();
    w.write_record([
        "total".to_string(),
        sig6(scenario.total_baseline()),
        sig6(report.calls.total()),
        String::new(),
        sig6(report.achieved_kwh),
        format!("{full} full"),
        sig6(report.bills.iter().sum()),
        sig6(report.rewards.iter().sum()),
    ])
    .map_err(ser)?;
    finish(w)
}

/// One row per solved point of a fairness sweep.
pub fn sweep_csv(rows: &[(f64, &SolutionReport)]) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(SWEEP_COLUMNS).map_err(ser)?;
    for (gamma, r) in rows {
        w.write_record([
            sig6(*gamma),
            sig6(r.achieved_kwh),
            sig6(r.commission),
            sig6(r.call_variance),
        ])
        .map_err(ser)?;
    }
    finish(w)
}

/// A labeled report to be drawn as one series of a grouped bar chart.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub label: &'a str,
    pub report: &'a SolutionReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FigureData {
    pub csv: String,
    pub svg: String,
}

/// Grouped bars per consumer: baseline once, then call and shifted energy
/// for every series.
pub fn to_figure_data(scenario: &Scenario, series: &[Series<'_>]) -> Result<FigureData> {
    let n = scenario.len();
    if series.is_empty() {
        return Err(Error::Argument("figure needs at least one series".into()));
    }
    for s in series {
        model::check_len("series calls", s.report.calls.len(), n)?;
    }
    let mut w = csv_writer();
    w.write_record(FIGURE_COLUMNS).map_err(ser)?;
    for s in series {
        for (i, c) in scenario.consumers.iter().enumerate() {
            w.write_record([
                s.label.to_string(),
                (i + 1).to_string(),
                sig6(c.baseline),
                sig6(s.report.calls.as_slice()[i]),
                sig6(s.report.shifted_kwh[i]),
            ])
            .map_err(ser)?;
        }
    }
    Ok(FigureData {
        csv: finish(w)?,
        svg: svg_bars(scenario, series),
    })
}

const PALETTE: [(&str, &str); 6] = [
    ("#1f77b4", "#aec7e8"),
    ("#d62728", "#ff9896"),
    ("#2ca02c", "#98df8a"),
    ("#9467bd", "#c5b0d5"),
    ("#8c564b", "#c49c94"),
    ("#e377c2", "#f7b6d2"),
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_bars(scenario: &Scenario, series: &[Series<'_>]) -> String {
    const BAR: f64 = 10.0;
    const GAP: f64 = 14.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 20.0;
    const PLOT_H: f64 = 240.0;
    let n = scenario.len();
    let bars = 1 + 2 * series.len();
    let group_w = bars as f64 * BAR + GAP;
    let plot_w = n as f64 * group_w;
    let legend_h = 16.0 * (1 + 2 * series.len()) as f64;
    let width = LEFT + plot_w + 20.0;
    let height = TOP + PLOT_H + 30.0 + legend_h + 10.0;
    let ymax = scenario
        .consumers
        .iter()
        .map(|c| c.baseline)
        .chain(
            series
                .iter()
                .flat_map(|s| s.report.calls.as_slice().iter().copied()),
        )
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let y = |v: f64| TOP + PLOT_H * (1.0 - v / ymax);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<!-- dr-stackelberg v1 -->");
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    // Axes and ticks.
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.2}\" stroke=\"black\"/>",
        TOP + PLOT_H
    );
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{b:.2}\" x2=\"{:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>",
        LEFT + plot_w,
        b = TOP + PLOT_H
    );
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            LEFT - 4.0,
            y(v) + 3.0,
            sig6(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"12\" y=\"{:.2}\" font-size=\"10\" transform=\"rotate(-90 12 {:.2})\" text-anchor=\"middle\">kWh</text>",
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );

    for (i, c) in scenario.consumers.iter().enumerate() {
        let x0 = LEFT + GAP / 2.0 + i as f64 * group_w;
        let _ = writeln!(out, "<g id=\"consumer-{}\">", i + 1);
        let mut rect = |k: usize, v: f64, fill: &str| {
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{BAR:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>",
                x0 + k as f64 * BAR,
                y(v),
                TOP + PLOT_H - y(v)
            );
        };
        rect(0, c.baseline, "#7f7f7f");
        for (s, ser) in series.iter().enumerate() {
            let (dark, light) = PALETTE[s % PALETTE.len()];
            rect(1 + 2 * s, ser.report.calls.as_slice()[i], dark);
            rect(2 + 2 * s, ser.report.shifted_kwh[i], light);
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            x0 + bars as f64 * BAR / 2.0,
            TOP + PLOT_H + 14.0,
            i + 1
        );
        let _ = writeln!(out, "</g>");
    }

    let mut ly = TOP + PLOT_H + 34.0;
    let mut legend = |fill: &str, text: &str| {
        let _ = writeln!(
            out,
            "<rect x=\"{LEFT}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{fill}\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">{}</text>",
            ly - 9.0,
            LEFT + 14.0,
            ly,
            escape(text)
        );
        ly += 16.0;
    };
    legend("#7f7f7f", "baseline");
    for (s, ser) in series.iter().enumerate() {
        let (dark, light) = PALETTE[s % PALETTE.len()];
        legend(dark, &format!("{} call", ser.label));
        legend(light, &format!("{} shifted", ser.label));
    }
    out.push_str("</svg>\n");
    out
}
