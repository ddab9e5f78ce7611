use narrowfront::acceptance::{run_all, TITLES};

fn main() {
    // `cargo test -- --list` and filters are libtest conventions; honour the listing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let ids: Vec<usize> = (1..=TITLES.len()).collect();
    let results = run_all(&ids, |r| println!("{r}"));
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
