import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the CLI suite shells out to node and python on a real corpus
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
