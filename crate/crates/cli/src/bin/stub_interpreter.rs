//! Minimal fake interpreter for tests, fixtures, and offline demos.
//!
//! Executes a tiny line-oriented script language instead of real
//! visualization scripting, so the whole pipeline can run deterministically
//! with no external tools:
//!
//! ```text
//! # comment
//! emit <pattern> <width> <height> <path>   write a deterministic PNG
//! copy <src> <dst>                         copy a file
//! print <text...>                          line to stdout
//! warn <text...>                           line to stderr
//! traceback <Class> <message...>           interpreter-style traceback on stderr
//! sleep <seconds>                          stall (for timeout tests)
//! exit <code>                              stop with the given status
//! ```
//!
//! Patterns: `gradient`, `checker`, `rings`, `solid:R,G,B`. Pixel values are
//! pure integer functions of the coordinates, so the same `emit` always
//! produces the same image.
//!
//! `stub-interpreter --pattern <name> <w> <h> <out.png>` writes one pattern
//! directly, which is how the suite fixtures' ground-truth images were made.

use std::path::Path;
use std::process::ExitCode;

use chatvis_core::metrics::ImageBuffer;

fn pattern_pixel(name: &str, x: u32, y: u32, w: u32, h: u32) -> Option<[u8; 3]> {
    match name {
        "gradient" => Some([
            (x * 255 / w.saturating_sub(1).max(1)) as u8,
            (y * 255 / h.saturating_sub(1).max(1)) as u8,
            ((x + y) * 255 / (w + h).saturating_sub(2).max(1)) as u8,
        ]),
        "checker" => {
            if ((x / 4) + (y / 4)).is_multiple_of(2) {
                Some([30, 30, 30])
            } else {
                Some([220, 220, 220])
            }
        }
        "rings" => {
            let dx = x as i64 * 2 - w as i64 + 1;
            let dy = y as i64 * 2 - h as i64 + 1;
            if ((dx * dx + dy * dy) / 64) % 2 == 0 {
                Some([200, 80, 40])
            } else {
                Some([40, 80, 200])
            }
        }
        _ => {
            let spec = name.strip_prefix("solid:")?;
            let mut parts = spec.split(',').map(|p| p.parse::<u8>().ok());
            Some([parts.next()??, parts.next()??, parts.next()??])
        }
    }
}

fn render_pattern(name: &str, w: u32, h: u32) -> Option<ImageBuffer> {
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&pattern_pixel(name, x, y, w, h)?);
        }
    }
    ImageBuffer::new(w, h, 3, data).ok()
}

fn fail(script: &str, line_no: usize, source_line: &str, class: &str, message: &str) -> ExitCode {
    eprintln!("Traceback (most recent call last):");
    eprintln!("  File \"{script}\", line {line_no}, in <module>");
    eprintln!("    {source_line}");
    eprintln!("{class}: {message}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();

    if args.first().map(String::as_str) == Some("--pattern") {
        if args.len() != 5 {
            eprintln!("usage: stub-interpreter --pattern <name> <w> <h> <out.png>");
            return ExitCode::from(2);
        }
        let (name, w, h) = (&args[1], args[2].parse(), args[3].parse());
        let (Ok(w), Ok(h)) = (w, h) else {
            eprintln!("bad dimensions");
            return ExitCode::from(2);
        };
        let Some(image) = render_pattern(name, w, h) else {
            eprintln!("unknown pattern {name}");
            return ExitCode::from(2);
        };
        if let Err(e) = image.write_png(Path::new(&args[4])) {
            eprintln!("write failed: {e}");
            return ExitCode::from(1);
        }
        return ExitCode::SUCCESS;
    }

    let Some(script_path) = args.first() else {
        eprintln!("usage: stub-interpreter <script>");
        return ExitCode::from(2);
    };
    let source = match std::fs::read_to_string(script_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot read {script_path}: {e}");
            return ExitCode::from(2);
        }
    };

    for (i, raw_line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        let directive = words.next().unwrap_or_default();
        let rest: Vec<&str> = words.collect();
        match directive {
            "emit" => {
                let ok = (|| {
                    let [name, w, h, path] = rest.as_slice() else { return false };
                    let (Ok(w), Ok(h)) = (w.parse(), h.parse()) else { return false };
                    match render_pattern(name, w, h) {
                        Some(image) => image.write_png(Path::new(path)).is_ok(),
                        None => false,
                    }
                })();
                if !ok {
                    return fail(script_path, line_no, raw_line, "StubEmitError", "bad emit directive");
                }
            }
            "copy" => {
                let [src, dst] = rest.as_slice() else {
                    return fail(script_path, line_no, raw_line, "StubCopyError", "copy needs src and dst");
                };
                if std::fs::copy(src, dst).is_err() {
                    return fail(script_path, line_no, raw_line, "FileNotFoundError", src);
                }
            }
            "print" => println!("{}", rest.join(" ")),
            "warn" => eprintln!("{}", rest.join(" ")),
            "traceback" => {
                let class = rest.first().copied().unwrap_or("RuntimeError");
                let message = rest.get(1..).map(|r| r.join(" ")).unwrap_or_default();
                eprintln!("Traceback (most recent call last):");
                eprintln!("  File \"{script_path}\", line {line_no}, in <module>");
                eprintln!("    {raw_line}", raw_line = raw_line.trim());
                eprintln!("{class}: {message}");
            }
            "sleep" => {
                let secs: f64 = rest.first().and_then(|s| s.parse().ok()).unwrap_or(0.0);
                std::thread::sleep(std::time::Duration::from_secs_f64(secs));
            }
            "exit" => {
                let code: u8 = rest.first().and_then(|s| s.parse().ok()).unwrap_or(0);
                return ExitCode::from(code);
            }
            _ => {
                return fail(script_path, line_no, raw_line, "StubDirectiveError", directive);
            }
        }
    }
    ExitCode::SUCCESS
}
