use std::io;

fn main() {
    let code = nmr_grape_cli::commands::main_with(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
