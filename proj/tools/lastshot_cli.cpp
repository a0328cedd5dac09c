#include <cstdio>

int main() {
  std::puts("lastshot: CLI under construction");
  return 0;
}
