import { defineConfig } from "vitest/config";

export default defineConfig({
  server: {
    proxy: {
      // dev-time proxy to a running `veridex serve` instance
      "/api": "http://127.0.0.1:8765",
    },
  },
  test: {
    environment: "happy-dom",
  },
});
