/* tslint:disable */
/* eslint-disable */

/**
 * JSON `{height, width, grid, thresholds, ratios}`; `grid` is scaled to a maximum of 1.
 */
export function blockErf(block: string, size: number, samples: number, seed: number): string;

/**
 * JSON `{before, after, change}` for a cascade of two depthwise kernels.
 */
export function cascadeCompare(first: number, second: number, size: number, samples: number, seed: number): string;

export function resample(rgba: Uint8Array, width: number, height: number, out_w: number, out_h: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly blockErf: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly cascadeCompare: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly resample: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
