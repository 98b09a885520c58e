//! Runs the property suites and prints a pass count per suite. Pass suite
//! names as arguments to run a subset.

use iadmm::verify::{run_suite, SUITES};

fn main() -> iadmm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let names: Vec<&str> = if args.is_empty() { SUITES.to_vec() } else { args.iter().map(String::as_str).collect() };
    let mut failed = 0;
    for name in names {
        let rows = run_suite(name)?;
        let bad: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
        println!("{name:>10}: {} / {} checks pass", rows.len() - bad.len(), rows.len());
        for r in bad.iter().take(5) {
            println!("            {r:?}");
        }
        failed += bad.len();
    }
    std::process::exit(i32::from(failed > 0));
}
