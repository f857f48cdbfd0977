import { defineConfig } from "vitest/config";

export default defineConfig({
  base: "./",
  test: {
    include: ["test/**/*.test.ts"],
    pool: "forks",
    // the allocation-growth test wants an explicit gc() between samples
    execArgv: ["--expose-gc"]
  }
});
