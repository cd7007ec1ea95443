use std::process::exit;

fn main() {
    exit(nelson::cli::run(std::env::args_os()));
}
