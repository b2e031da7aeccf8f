//! Fake LPIPS scorer for tests: prints a fixed value for any image pair.
//! `--value <v>` overrides the default 0.26.

use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut value = "0.26".to_string();
    let mut paths = 0usize;
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        if arg == "--value" {
            match iter.next() {
                Some(v) => value = v.clone(),
                None => {
                    eprintln!("--value needs an argument");
                    return ExitCode::from(2);
                }
            }
        } else {
            paths += 1;
        }
    }
    if paths != 2 {
        eprintln!("usage: stub-lpips [--value v] <imageA> <imageB>");
        return ExitCode::from(2);
    }
    println!("{value}");
    ExitCode::SUCCESS
}
