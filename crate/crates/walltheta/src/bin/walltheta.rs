fn main() {
    walltheta::cli::main();
}
