import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    // the end-to-end test trains real models behind the service
    testTimeout: 240_000,
    hookTimeout: 240_000,
  },
});
