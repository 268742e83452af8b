//! Plain CSV export. Every file starts with a block of `# key: value` lines
//! supplied by the caller, followed by a single header row and the body.
//! Floats use Rust's shortest round-trip formatting, so identical runs give
//! byte-identical bodies.

use std::io::{self, Write};

use crate::adaptive::ControlFilterState;
use crate::metrics::RunLog;
use crate::protocol::CommEvent;
use crate::scalar::Real;

/// Convention line for spectrum files.
pub const SPECTRUM_CONVENTION: &str = "averaged periodogram, 4096-sample periodic Hann segments, 50% overlap, \
one-sided power in dB; a bin-centred sinusoid of amplitude A reads 10*log10(A^2/2) (-3.01 dB for A = 1)";

fn write_header<W: Write>(out: &mut W, header: &[(String, String)]) -> io::Result<()> {
    for (key, value) in header {
        for (i, line) in value.lines().enumerate() {
            if i == 0 {
                writeln!(out, "# {key}: {line}")?;
            } else if line.is_empty() {
                writeln!(out, "#")?;
            } else {
                writeln!(out, "#   {line}")?;
            }
        }
    }
    Ok(())
}

/// `sample,time_s,e_0..,d_0..,anse_db` every `stride` samples; ANSE is blank
/// during warm-up or when undefined.
pub fn write_run_log<W: Write, T: Real>(
    mut out: W,
    header: &[(String, String)],
    log: &RunLog<T>,
    anse_window: usize,
    stride: usize,
) -> io::Result<()> {
    write_header(&mut out, header)?;
    let k = log.nodes();
    let mut cols = vec!["sample".to_string(), "time_s".to_string()];
    cols.extend((0..k).map(|i| format!("e_{i}")));
    cols.extend((0..k).map(|i| format!("d_{i}")));
    cols.push("anse_db".into());
    writeln!(out, "{}", cols.join(","))?;
    let anse = log.anse_series(anse_window);
    let stride = stride.max(1);
    for n in (0..log.samples()).filter(|n| (n + 1) % stride == 0 || *n == 0) {
        write!(out, "{n},{}", n as f64 / log.fs)?;
        for e in &log.errors {
            write!(out, ",{}", e[n].as_f64())?;
        }
        for d in &log.disturbances {
            write!(out, ",{}", d[n].as_f64())?;
        }
        match anse[n] {
            Some(a) => writeln!(out, ",{a}")?,
            None => writeln!(out, ",")?,
        }
    }
    out.flush()
}

/// `sample_index,time_s,requester_id,policy,triggered,phi_norm_0..`.
pub fn write_events<W: Write, T: Real>(
    mut out: W,
    header: &[(String, String)],
    events: &[CommEvent<T>],
    nodes: usize,
    fs: f64,
) -> io::Result<()> {
    write_header(&mut out, header)?;
    let mut cols: Vec<String> =
        ["sample_index", "time_s", "requester_id", "policy", "triggered"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..nodes).map(|i| format!("phi_norm_{i}")));
    writeln!(out, "{}", cols.join(","))?;
    for ev in events {
        let triggered: Vec<String> = ev.triggered.iter().map(usize::to_string).collect();
        write!(
            out,
            "{},{},{},{},{}",
            ev.sample,
            ev.sample as f64 / fs,
            ev.requester,
            ev.tag.as_str(),
            triggered.join(";")
        )?;
        for norm in ev.payload_norms() {
            write!(out, ",{norm}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// One frequency column plus one power column per named spectrum.
pub fn write_spectra<W: Write>(
    mut out: W,
    header: &[(String, String)],
    spectra: &[(String, Vec<(f64, f64)>)],
) -> io::Result<()> {
    write_header(&mut out, header)?;
    let mut cols = vec!["frequency_hz".to_string()];
    cols.extend(spectra.iter().map(|(name, _)| format!("{name}_db")));
    writeln!(out, "{}", cols.join(","))?;
    let bins = spectra.first().map_or(0, |s| s.1.len());
    for b in 0..bins {
        write!(out, "{}", spectra[0].1[b].0)?;
        for (_, s) in spectra {
            write!(out, ",{}", s[b].1)?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Final filters: `node,tap,w,w_center`.
pub fn write_weights<W: Write, T: Real>(
    mut out: W,
    header: &[(String, String)],
    states: &[ControlFilterState<T>],
) -> io::Result<()> {
    write_header(&mut out, header)?;
    writeln!(out, "node,tap,w,w_center")?;
    for (k, s) in states.iter().enumerate() {
        for (i, (w, c)) in s.weights().iter().zip(s.center()).enumerate() {
            writeln!(out, "{k},{i},{},{}", w.as_f64(), c.as_f64())?;
        }
    }
    out.flush()
}

/// Weight-norm trace: `sample,norm_0..`.
pub fn write_weight_trace<W: Write>(
    mut out: W,
    header: &[(String, String)],
    trace: &[(usize, Vec<f64>)],
) -> io::Result<()> {
    write_header(&mut out, header)?;
    let nodes = trace.first().map_or(0, |t| t.1.len());
    let mut cols = vec!["sample".to_string()];
    cols.extend((0..nodes).map(|i| format!("norm_{i}")));
    writeln!(out, "{}", cols.join(","))?;
    for (n, norms) in trace {
        write!(out, "{n}")?;
        for v in norms {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Lines of a CSV file that are not part of the `#` header block.
pub fn csv_body(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#'))
}
