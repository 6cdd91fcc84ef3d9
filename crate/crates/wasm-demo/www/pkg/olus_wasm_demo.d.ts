/* tslint:disable */
/* eslint-disable */

/**
 * One ground-truth centerline, a jittered copy and the distances between
 * them, as JSON.
 */
export function curve_pair(seed: bigint, sigma: number, offset: number, arc: boolean): string;

/**
 * Scores a perturbed synthetic scene and returns the report as JSON, with
 * the closed-form expectations where the perturbation admits them.
 */
export function explore(seed: bigint, jitter: number, drop_rate: number, flip_rate: number, false_positives: number, arc: boolean): string;

/**
 * Row-major 0/1 mask of one synthetic frame. `source` is `sd-map`, `lanes`
 * or `areas`.
 */
export function raster(seed: bigint, rows: number, cols: number, source: string, arc: boolean): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly curve_pair: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
    readonly explore: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly raster: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
