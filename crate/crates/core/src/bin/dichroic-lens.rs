use std::io::{stderr, stdin, stdout};

fn main() {
    let code = dichroic_lens::cli::run(std::env::args_os(), &mut stdin().lock(), &mut stdout().lock(), &mut stderr());
    std::process::exit(code);
}
