fn main() {
    let code = match covreg_cli::run(std::env::args_os().collect()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().trim_end());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
