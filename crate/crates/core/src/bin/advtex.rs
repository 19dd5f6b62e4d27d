use std::process::exit;

fn main() {
    exit(advtex::cli::run(std::env::args_os()));
}
