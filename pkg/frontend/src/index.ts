export * from "./types.js";
export * from "./schema.js";
export * from "./state.js";
export * from "./client.js";
export * from "./scrubber.js";
export * from "./render.js";
