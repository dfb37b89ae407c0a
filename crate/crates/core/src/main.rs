fn main() {
    std::process::exit(lambdajs::cli::main());
}
