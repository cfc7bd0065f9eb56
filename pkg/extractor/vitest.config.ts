import { defineConfig } from 'vitest/config';

// the frozen towers draw ~1M weights per instantiation, so the
// end-to-end extraction tests need generous timeouts
export default defineConfig({
  test: {
    testTimeout: 120000,
    hookTimeout: 60000,
  },
});
