#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "xman/cli.hpp"

int main(int argc, char** argv) {
  xman::CliContext ctx;
  std::error_code ec;
  auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  ctx.xman_exe = ec ? std::filesystem::absolute(argv[0]).string() : self.string();
  ctx.prompt = xman::PromptIo::from_stdio();
  std::vector<std::string> args(argv + 1, argv + argc);
  return xman::run_cli(args, std::cout, std::cerr, ctx);
}
