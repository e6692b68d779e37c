//! Runs every oracle comparison and freezes the results, refusing to write
//! if any comparison fails.

use std::process::ExitCode;

use gi_validation::fixture::{self, Derived, DERIVED_FILE, S7_HEAD_FILE};

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run() -> gi_validation::Result<bool> {
    let mut ok = true;
    let cases = fixture::evaluate_all()?;
    for (name, ev) in &cases {
        for c in &ev.checks {
            let verdict = match (c.passed(), c.deviation) {
                (true, false) => "ok  ",
                (false, false) => "FAIL",
                (_, true) => "DEV ",
            };
            println!("{verdict} {name}: {} = {:e} (bounds {:?}..{:?})", c.label, c.measured, c.lo, c.hi);
        }
        ok &= ev.failures().is_empty();
    }
    let s7 = fixture::run_s7()?;
    let tails_ok = s7.record.gif_tail_frequency < s7.record.ekf_tail_frequency;
    println!(
        "{} s7 seed 42: tail gif {} ekf {}",
        if tails_ok { "ok  " } else { "FAIL" },
        s7.record.gif_tail_frequency,
        s7.record.ekf_tail_frequency
    );
    ok &= tails_ok;
    if !ok || std::env::args().any(|a| a == "--dry-run") {
        return Ok(ok);
    }
    let dir = fixture::fixture_dir();
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| gi_validation::ValidationError::Io { path, source })
    };
    std::fs::create_dir_all(&dir).map_err(|source| gi_validation::ValidationError::Io { path: dir.clone(), source })?;
    let derived = Derived { cases, s7: s7.record };
    write(DERIVED_FILE, &(serde_json::to_string_pretty(&derived)? + "\n"))?;
    write(S7_HEAD_FILE, &s7.head)?;
    println!("wrote {}", dir.display());
    Ok(true)
}
